//! Slice-order plans and the propagation loop.

use serde::{Deserialize, Serialize};
use slicetrack_core::volume::PromptKind;
use slicetrack_core::{Mask3D, Prompt, SliceMask2D, Strategy, TumorExtent};
use thiserror::Error;

use crate::backend::{BackendError, Guidance, SessionHandle, StepRequest};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("invalid extent: z_first {z_first} > z_last {z_last}")]
    InvalidExtent { z_first: usize, z_last: usize },
    #[error("center slice {z_center} outside extent [{z_first}, {z_last}]")]
    CenterOutsideExtent {
        z_first: usize,
        z_last: usize,
        z_center: usize,
    },
    #[error("extent [{z_first}, {z_last}] exceeds a {d}-slice volume")]
    ExtentOutOfRange { z_first: usize, z_last: usize, d: usize },
    #[error("prompt is on slice {prompt_z} but the plan seeds slice {seed_z}")]
    PromptMismatch { prompt_z: usize, seed_z: usize },
    #[error("stop_after_empty must be at least 1")]
    InvalidStop,
    #[error("slice {z}: {source}")]
    Step {
        z: usize,
        #[source]
        source: BackendError,
    },
}

/// Slice order for one run: the seed slice, then one or two chains stepping
/// away from it one slice at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationPlan {
    pub strategy: Strategy,
    pub seed_z: usize,
    pub chains: Vec<Vec<usize>>,
    /// Inclusive bounds of the predicted slices.
    pub z_range: (usize, usize),
}

impl PropagationPlan {
    /// Number of slices the run predicts, seed included.
    pub fn slices_total(&self) -> usize {
        1 + self.chains.iter().map(Vec::len).sum::<usize>()
    }

    pub fn max_step_index(&self) -> usize {
        self.chains.iter().map(Vec::len).max().unwrap_or(0)
    }
}

pub fn build_plan(strategy: Strategy, extent: &TumorExtent) -> Result<PropagationPlan, PropagationError> {
    let TumorExtent {
        z_first,
        z_last,
        z_center,
    } = *extent;
    if z_first > z_last {
        return Err(PropagationError::InvalidExtent { z_first, z_last });
    }
    let (seed_z, chains) = match strategy {
        Strategy::BottomToTop => (z_first, vec![(z_first + 1..=z_last).collect()]),
        Strategy::TopToBottom => (z_last, vec![(z_first..z_last).rev().collect()]),
        Strategy::CenterOutward => {
            if !(z_first..=z_last).contains(&z_center) {
                return Err(PropagationError::CenterOutsideExtent {
                    z_first,
                    z_last,
                    z_center,
                });
            }
            (
                z_center,
                vec![
                    (z_center + 1..=z_last).collect(),
                    (z_first..z_center).rev().collect(),
                ],
            )
        }
    };
    Ok(PropagationPlan {
        strategy,
        seed_z,
        chains,
        z_range: (z_first, z_last),
    })
}

/// What a trace entry's prediction was conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceGuidance {
    Box,
    Mask,
    PreviousMask,
    /// Not predicted: an earlier slice of the chain came back empty.
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub z: usize,
    /// `None` for the seed slice, otherwise the chain's index in the plan.
    pub chain: Option<usize>,
    pub step_index: usize,
    pub guidance: TraceGuidance,
    pub area: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagationTrace {
    pub entries: Vec<TraceEntry>,
}

impl PropagationTrace {
    pub fn backend_calls(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.guidance != TraceGuidance::Dead)
            .count()
    }
}

fn step(
    session: &mut SessionHandle,
    z: usize,
    guidance: Guidance,
) -> Result<(SliceMask2D, f64), PropagationError> {
    session
        .segment_step(&StepRequest { z, guidance })
        .map(|r| (r.mask, r.latency_ms))
        .map_err(|source| PropagationError::Step { z, source })
}

fn prompt_entry(prompt: &Prompt, area: usize, latency_ms: f64) -> TraceEntry {
    TraceEntry {
        z: prompt.z(),
        chain: None,
        step_index: 0,
        guidance: match prompt.kind() {
            PromptKind::Box => TraceGuidance::Box,
            PromptKind::Mask => TraceGuidance::Mask,
        },
        area,
        latency_ms,
    }
}

pub fn run_propagation(
    plan: &PropagationPlan,
    session: &mut SessionHandle,
    prompt: &Prompt,
) -> Result<(Mask3D, PropagationTrace), PropagationError> {
    run_propagation_with_progress(plan, session, prompt, &mut |_, _| {})
}

/// Runs `plan`, reporting `(slices_done, slices_total)` after every slice.
pub fn run_propagation_with_progress(
    plan: &PropagationPlan,
    session: &mut SessionHandle,
    prompt: &Prompt,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<(Mask3D, PropagationTrace), PropagationError> {
    if prompt.z() != plan.seed_z {
        return Err(PropagationError::PromptMismatch {
            prompt_z: prompt.z(),
            seed_z: plan.seed_z,
        });
    }
    let dims = session.dims();
    let (z_lo, z_hi) = plan.z_range;
    if z_hi >= dims.d {
        return Err(PropagationError::ExtentOutOfRange {
            z_first: z_lo,
            z_last: z_hi,
            d: dims.d,
        });
    }
    let total = plan.slices_total();
    let mut done = 0;
    let mut out = Mask3D::empty(dims, session.spacing());
    let mut trace = PropagationTrace::default();

    let (seed_mask, latency) = step(session, plan.seed_z, Guidance::Prompt(prompt.clone()))?;
    trace
        .entries
        .push(prompt_entry(prompt, seed_mask.area(), latency));
    out.set_slice(plan.seed_z, &seed_mask).expect("dims checked by session");
    done += 1;
    progress(done, total);

    for (c, chain) in plan.chains.iter().enumerate() {
        let mut prev = seed_mask.clone();
        for (i, &z) in chain.iter().enumerate() {
            let step_index = i + 1;
            let entry = if prev.is_empty() {
                TraceEntry {
                    z,
                    chain: Some(c),
                    step_index,
                    guidance: TraceGuidance::Dead,
                    area: 0,
                    latency_ms: 0.0,
                }
            } else {
                let (mask, latency_ms) = step(
                    session,
                    z,
                    Guidance::PreviousMask {
                        mask: prev,
                        step_index,
                    },
                )?;
                out.set_slice(z, &mask).expect("dims checked by session");
                prev = mask;
                TraceEntry {
                    z,
                    chain: Some(c),
                    step_index,
                    guidance: TraceGuidance::PreviousMask,
                    area: prev.area(),
                    latency_ms,
                }
            };
            trace.entries.push(entry);
            done += 1;
            progress(done, total);
        }
    }
    Ok((out, trace))
}

pub fn run_interactive(
    session: &mut SessionHandle,
    prompt: &Prompt,
    stop_after_empty: usize,
) -> Result<(Mask3D, PropagationTrace), PropagationError> {
    run_interactive_with_progress(session, prompt, stop_after_empty, &mut |_, _| {})
}

/// Propagates from the prompt slice toward both volume boundaries without a
/// known extent. A chain stops at the boundary or after `stop_after_empty`
/// consecutive empty predictions; guidance is always the chain's last
/// nonempty mask. Progress totals are the volume depth, an upper bound.
pub fn run_interactive_with_progress(
    session: &mut SessionHandle,
    prompt: &Prompt,
    stop_after_empty: usize,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<(Mask3D, PropagationTrace), PropagationError> {
    if stop_after_empty == 0 {
        return Err(PropagationError::InvalidStop);
    }
    let dims = session.dims();
    let seed_z = prompt.z();
    let mut out = Mask3D::empty(dims, session.spacing());
    let mut trace = PropagationTrace::default();
    let mut done = 0;

    let (seed_mask, latency) = step(session, seed_z, Guidance::Prompt(prompt.clone()))?;
    trace.entries.push(prompt_entry(prompt, seed_mask.area(), latency));
    out.set_slice(seed_z, &seed_mask).expect("dims checked by session");
    done += 1;
    progress(done, dims.d);

    let up: Vec<usize> = (seed_z + 1..dims.d).collect();
    let down: Vec<usize> = (0..seed_z).rev().collect();
    for (c, chain) in [up, down].into_iter().enumerate() {
        let mut guide = seed_mask.clone();
        let mut empties = 0;
        for (i, z) in chain.into_iter().enumerate() {
            let step_index = i + 1;
            let (mask, latency_ms) = step(
                session,
                z,
                Guidance::PreviousMask {
                    mask: guide.clone(),
                    step_index,
                },
            )?;
            trace.entries.push(TraceEntry {
                z,
                chain: Some(c),
                step_index,
                guidance: TraceGuidance::PreviousMask,
                area: mask.area(),
                latency_ms,
            });
            done += 1;
            progress(done, dims.d);
            if mask.is_empty() {
                empties += 1;
                if empties >= stop_after_empty {
                    break;
                }
            } else {
                empties = 0;
                out.set_slice(z, &mask).expect("dims checked by session");
                guide = mask;
            }
        }
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Segmenter, GtOracle};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use slicetrack_core::{BoundingBox2D, Dims3, Spacing, Strategy};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn extent(z_first: usize, z_last: usize) -> TumorExtent {
        TumorExtent {
            z_first,
            z_last,
            z_center: (z_first + z_last) / 2,
        }
    }

    #[test]
    fn bottom_to_top() {
        let p = build_plan(Strategy::BottomToTop, &extent(10, 14)).unwrap();
        assert_eq!(p.seed_z, 10);
        assert_eq!(p.chains, vec![vec![11, 12, 13, 14]]);
    }

    #[test]
    fn top_to_bottom() {
        let p = build_plan(Strategy::TopToBottom, &extent(10, 14)).unwrap();
        assert_eq!(p.seed_z, 14);
        assert_eq!(p.chains, vec![vec![13, 12, 11, 10]]);
    }

    #[test]
    fn center_outward() {
        let p = build_plan(Strategy::CenterOutward, &extent(10, 14)).unwrap();
        assert_eq!(p.seed_z, 12);
        assert_eq!(p.chains, vec![vec![13, 14], vec![11, 10]]);
    }

    #[test]
    fn single_slice() {
        for s in Strategy::ALL {
            let p = build_plan(s, &extent(5, 5)).unwrap();
            assert_eq!(p.seed_z, 5);
            assert!(p.chains.iter().all(Vec::is_empty));
        }
    }

    #[test]
    fn inverted_extent() {
        let e = TumorExtent {
            z_first: 6,
            z_last: 5,
            z_center: 5,
        };
        assert!(matches!(
            build_plan(Strategy::BottomToTop, &e),
            Err(PropagationError::InvalidExtent { .. })
        ));
    }

    proptest! {
        #[test]
        fn coverage(lo in 0usize..50, span in 1usize..60) {
            let hi = lo + span - 1;
            for s in Strategy::ALL {
                let p = build_plan(s, &extent(lo, hi)).unwrap();
                let mut seen = BTreeSet::from([p.seed_z]);
                for c in &p.chains {
                    let mut prev = p.seed_z;
                    for &z in c {
                        prop_assert_eq!(z.abs_diff(prev), 1);
                        prev = z;
                        prop_assert!(seen.insert(z));
                    }
                }
                prop_assert_eq!(seen, (lo..=hi).collect::<BTreeSet<_>>());
                prop_assert_eq!(p.slices_total(), span);
            }
        }
    }

    /// Returns a fixed mask on chosen slices, empty elsewhere, and records calls.
    struct Scripted {
        dims: Dims3,
        nonempty: Box<dyn Fn(usize) -> bool + Send>,
        calls: Arc<std::sync::Mutex<Vec<(usize, usize)>>>,
    }

    impl Segmenter for Scripted {
        fn dims(&self) -> Dims3 {
            self.dims
        }
        fn spacing(&self) -> Spacing {
            Spacing::unit()
        }
        fn step(&mut self, req: &StepRequest) -> Result<SliceMask2D, BackendError> {
            self.calls.lock().unwrap().push((req.z, req.guidance.step_index()));
            let mut m = SliceMask2D::empty(self.dims.h, self.dims.w);
            if (self.nonempty)(req.z) {
                m.set(1, 1, true);
            }
            Ok(m)
        }
    }

    type Calls = Arc<std::sync::Mutex<Vec<(usize, usize)>>>;

    fn scripted(d: usize, f: impl Fn(usize) -> bool + Send + 'static) -> (SessionHandle, Calls) {
        let calls = Calls::default();
        let s = Scripted {
            dims: Dims3::new(d, 3, 3).unwrap(),
            nonempty: Box::new(f),
            calls: calls.clone(),
        };
        (SessionHandle::new("scripted", Box::new(s)), calls)
    }

    fn box_at(z: usize) -> Prompt {
        Prompt::Box(BoundingBox2D {
            z,
            x_min: 0,
            y_min: 0,
            x_max: 3,
            y_max: 3,
        })
    }

    #[test]
    fn interactive_stop_rule() {
        let (mut s, calls) = scripted(20, |z| (8..=11).contains(&z));
        let (out, trace) = run_interactive(&mut s, &box_at(9), 2).unwrap();
        let zs: Vec<usize> = calls.lock().unwrap().iter().map(|c| c.0).collect();
        assert_eq!(zs, vec![9, 10, 11, 12, 13, 8, 7, 6]);
        assert_eq!(out.foreground_slices(), Some((8, 11)));
        assert_eq!(trace.entries.len(), 8);
    }

    #[test]
    fn interactive_prompt_on_first_slice() {
        let (mut s, calls) = scripted(5, |_| true);
        run_interactive(&mut s, &box_at(0), 2).unwrap();
        let zs: Vec<usize> = calls.lock().unwrap().iter().map(|c| c.0).collect();
        assert_eq!(zs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn interactive_k1_alternating() {
        let (mut s, calls) = scripted(10, |z| z % 2 == 0);
        let (out, _) = run_interactive(&mut s, &box_at(4), 1).unwrap();
        let zs: Vec<usize> = calls.lock().unwrap().iter().map(|c| c.0).collect();
        assert_eq!(zs, vec![4, 5, 3]);
        assert_eq!(out.count(), 1);
        assert!(matches!(
            run_interactive(&mut s, &box_at(4), 0),
            Err(PropagationError::InvalidStop)
        ));
    }

    #[test]
    fn dead_chain_skips_backend() {
        let (mut s, calls) = scripted(20, |z| z <= 12);
        let plan = build_plan(Strategy::BottomToTop, &extent(10, 15)).unwrap();
        let (out, trace) = run_propagation(&plan, &mut s, &box_at(10)).unwrap();
        let zs: Vec<usize> = calls.lock().unwrap().iter().map(|c| c.0).collect();
        assert_eq!(zs, vec![10, 11, 12, 13]);
        let kinds: Vec<TraceGuidance> = trace.entries.iter().map(|e| e.guidance).collect();
        assert_eq!(kinds, [
            TraceGuidance::Box,
            TraceGuidance::PreviousMask,
            TraceGuidance::PreviousMask,
            TraceGuidance::PreviousMask,
            TraceGuidance::Dead,
            TraceGuidance::Dead,
        ]);
        assert_eq!(trace.backend_calls(), 4);
        assert_eq!(out.foreground_slices(), Some((10, 12)));
    }

    #[test]
    fn step_indices_and_progress() {
        let (mut s, calls) = scripted(20, |_| true);
        let plan = build_plan(Strategy::CenterOutward, &extent(3, 9)).unwrap();
        let mut seen = Vec::new();
        let (_, trace) =
            run_propagation_with_progress(&plan, &mut s, &box_at(6), &mut |d, t| seen.push((d, t)))
                .unwrap();
        assert_eq!(seen, (1..=7).map(|d| (d, 7)).collect::<Vec<_>>());
        let steps: Vec<usize> = trace.entries.iter().map(|e| e.step_index).collect();
        assert_eq!(steps, vec![0, 1, 2, 3, 1, 2, 3]);
        assert_eq!(calls.lock().unwrap().len(), 7);
    }

    #[test]
    fn prompt_must_be_on_seed() {
        let (mut s, _) = scripted(20, |_| true);
        let plan = build_plan(Strategy::BottomToTop, &extent(3, 9)).unwrap();
        assert!(matches!(
            run_propagation(&plan, &mut s, &box_at(4)),
            Err(PropagationError::PromptMismatch { prompt_z: 4, seed_z: 3 })
        ));
    }

    #[test]
    fn oracle_identity_restricted_to_extent() {
        let dims = Dims3::new(12, 6, 6).unwrap();
        let mut gt = Mask3D::empty(dims, Spacing::unit());
        for z in 2..=8 {
            for y in 1..=z.min(4) {
                gt.set(z, y, 2, true);
            }
        }
        let gt = Arc::new(gt);
        let e = slicetrack_core::volume::tumor_extent(&gt, Default::default()).unwrap();
        for strategy in Strategy::ALL {
            let plan = build_plan(strategy, &e).unwrap();
            let mut s = SessionHandle::new(
                "gt-oracle",
                Box::new(GtOracle::from_mask(gt.clone(), 0.0, 0.0, 0)),
            );
            let prompt = Prompt::Mask {
                z: plan.seed_z,
                mask: gt.slice(plan.seed_z),
            };
            let (out, _) = run_propagation(&plan, &mut s, &prompt).unwrap();
            assert_eq!(&out, gt.as_ref());
        }
    }
}
