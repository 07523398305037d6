use proptest::prelude::*;
use slicetrack_core::io::{load_mask, load_volume, read_nifti, save_mask, save_volume, Datatype};
use slicetrack_core::{Dims3, IntensityVolume, Mask3D, Spacing};

fn value_for(dt: Datatype, raw: u32) -> f32 {
    match dt {
        Datatype::U8 => (raw % 256) as f32,
        Datatype::I16 => (raw % 65536) as f32 - 32768.0,
        Datatype::U16 => (raw % 65536) as f32,
        Datatype::F32 => f32::from_bits(raw % 0x7f00_0000) * if raw & 1 == 0 { 1.0 } else { -1.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_datatype_roundtrips_exactly(
        d in 1usize..5, h in 1usize..6, w in 1usize..6,
        raw in proptest::collection::vec(any::<u32>(), 150),
        dt_index in 0usize..4,
        gzip in any::<bool>(),
    ) {
        let dt = Datatype::ALL[dt_index];
        let dims = Dims3::new(d, h, w).unwrap();
        let voxels: Vec<f32> = raw.iter().take(dims.len()).map(|&r| value_for(dt, r)).collect();
        let v = IntensityVolume::new(dims, Spacing::new(2.5, 0.7, 0.9).unwrap(), voxels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gzip { "v.nii.gz" } else { "v.nii" });
        save_volume(&v, &path, dt, gzip).unwrap();
        let back = load_volume(&path).unwrap();
        prop_assert_eq!(back.dims(), v.dims());
        prop_assert_eq!(back.spacing(), v.spacing());
        for (a, b) in back.voxels().iter().zip(v.voxels()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        let (meta, _) = read_nifti(&path).unwrap();
        prop_assert_eq!(meta.datatype, dt);
    }

    #[test]
    fn masks_roundtrip(bits in proptest::collection::vec(any::<bool>(), 60), gzip in any::<bool>()) {
        let m = Mask3D::new(Dims3::new(3, 4, 5).unwrap(), Spacing::new(1.5, 1.0, 1.0).unwrap(), bits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nii");
        save_mask(&m, &path, gzip).unwrap();
        prop_assert_eq!(load_mask(&path).unwrap(), m);
    }
}

#[test]
fn loading_is_deterministic() {
    let dims = Dims3::new(2, 3, 4).unwrap();
    let v = IntensityVolume::new(dims, Spacing::unit(), (0..24).map(|i| i as f32 * 0.25).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.nii.gz");
    save_volume(&v, &p, Datatype::F32, true).unwrap();
    assert_eq!(load_volume(&p).unwrap(), load_volume(&p).unwrap());
}
