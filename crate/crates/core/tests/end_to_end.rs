//! The public API used the way the CLI uses it: cohorts on disk, prepared
//! datasets, connectome features and their masks.

use proptest::prelude::*;
use sto_core::connectome::{diagnet_mask, feature_len, from_upper_triangle, upper_triangle, AtlasVolume};
use sto_core::nifti::{self, Datatype, NiftiVolume};
use sto_core::pipeline::{Dataset, PrepConfig};
use sto_core::synth::{self, SynthConfig};
use sto_core::Volume3D;

fn small() -> SynthConfig {
    SynthConfig { n_subjects_per_class: 4, extents: [8, 8, 8], n_timepoints: 40, t_range: None, seed: 5, ..SynthConfig::default() }
}

#[test]
fn dataset_from_disk_matches_in_memory() {
    let cfg = small();
    let prep = PrepConfig { grid: [8, 8, 8], ..PrepConfig::default() };
    let cohort = synth::generate_cohort(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    // float64 and gzip so the disk copy is bit-identical
    for (id, v) in cohort.subject_ids.iter().zip(&cohort.volumes) {
        nifti::write_file(&dir.path().join(format!("{id}.nii.gz")), v, Datatype::Float64).unwrap();
    }
    nifti::write_file(&dir.path().join("atlas.nii"), &cohort.atlas, Datatype::Int16).unwrap();
    let atlas = match nifti::read_file(&dir.path().join("atlas.nii")).unwrap() {
        NiftiVolume::Map(v) => AtlasVolume::from_volume(&v).unwrap(),
        NiftiVolume::Series(_) => panic!("atlas read as a series"),
    };
    let ids = cohort.subject_ids.clone();
    let from_disk = Dataset::prepare(ids.clone(), cohort.labels.clone(), &atlas, &cohort.mask, &prep, |i| {
        nifti::read_file(&dir.path().join(format!("{}.nii.gz", ids[i])))?.into_series()
    })
    .unwrap();
    let in_memory = Dataset::synthetic(&cfg, &prep).unwrap();
    assert_eq!(from_disk, in_memory);
    assert_eq!(in_memory.len(), 8);
    assert_eq!(in_memory.feature_dim(), Some(feature_len(atlas.n_rois())));
    let stacks = in_memory.volumes.as_ref().unwrap();
    assert!(stacks.iter().all(|s| s.channels() == 4 && s.extents() == [8, 8, 8]));
}

#[test]
fn quartile_mask_is_fit_on_the_given_subjects_only() {
    let data = Dataset::synthetic(&SynthConfig { n_subjects_per_class: 6, ..small() }, &PrepConfig { volumes: false, ..PrepConfig::default() }).unwrap();
    let feats = data.features.as_ref().unwrap();
    let d = feats[0].len();
    let half = diagnet_mask(&feats[..6]).unwrap();
    let again = diagnet_mask(&feats[..6]).unwrap();
    assert_eq!(half.indices, again.indices);
    assert_eq!(half.indices.len(), 2 * (d / 4));
    assert_eq!(half.d, d);
    // other subjects give a mask of the same size
    let other = diagnet_mask(&feats[6..]).unwrap();
    assert_eq!(other.indices.len(), half.indices.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn connectome_vector_round_trip(m in 2usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..feature_len(m)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fc = from_upper_triangle(&f, m).unwrap();
        prop_assert_eq!(upper_triangle(&fc), f);
        for i in 0..m {
            prop_assert_eq!(fc.get(i, i), 1.0);
            for j in 0..m {
                prop_assert_eq!(fc.get(i, j), fc.get(j, i));
            }
        }
    }

    #[test]
    fn float64_maps_round_trip_gzipped(ext in prop::array::uniform3(1usize..6), c in 1usize..4, values in prop::collection::vec(-1e9f64..1e9, 1..=450)) {
        let n = ext.iter().product::<usize>() * c;
        let data: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
        let v = Volume3D::new(ext, c, data).unwrap();
        let bytes = nifti::gzip(&nifti::write_nifti_as(&v, Datatype::Float64).unwrap()).unwrap();
        match nifti::parse_nifti(&bytes).unwrap().1 {
            NiftiVolume::Map(got) => prop_assert_eq!(got, v),
            NiftiVolume::Series(_) => prop_assert!(false, "read as a series"),
        }
    }
}
