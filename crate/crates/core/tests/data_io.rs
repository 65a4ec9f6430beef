use dvwu_core::data::{
    gen_synthetic, gen_synthetic_detailed, load_csv, norm_bound, save_csv, split, DatasetManifest,
    SynthConfig,
};
use dvwu_core::Dataset;
use std::fs;

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n: 500,
        d_informative: 6,
        d_redundant: 2,
        positive_ratio: 0.3,
        noise_ratio: 0.1,
        cube_side: 2.0,
        seed,
    }
}

#[test]
fn csv_round_trip() {
    let data = gen_synthetic(&small_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&data, &path).unwrap();
    let back = load_csv(&path, "label", "1").unwrap();
    assert_eq!(back.ids(), data.ids());
    assert_eq!(back.labels(), data.labels());
    assert!((back.features() - data.features()).amax() <= 1e-12);
}

#[test]
fn manifest_resolves_relative_paths_and_drops_missing_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("raw.csv"),
        "age,income,name,outcome\n30,1.5,a,yes\n41,,b,no\n25,2.0,c,no\n?,3.0,d,yes\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("raw.toml"),
        "path = \"raw.csv\"\nlabel_column = \"outcome\"\npositive_token = \"yes\"\ndrop_columns = [\"name\"]\n",
    )
    .unwrap();
    let data: Dataset = DatasetManifest::read(dir.path().join("raw.toml"))
        .unwrap()
        .load()
        .unwrap();
    assert_eq!(data.n(), 2);
    assert_eq!(data.d(), 2);
    assert_eq!(data.labels(), &[1.0, -1.0]);
}

#[test]
fn generator_is_deterministic_and_exact() {
    let cfg = small_config(7);
    let a = gen_synthetic_detailed(&cfg).unwrap();
    let b = gen_synthetic_detailed(&cfg).unwrap();
    assert_eq!(a.data, b.data);
    let positives = a.clean_labels.iter().filter(|y| **y > 0.0).count();
    assert_eq!(positives, 150);
    let flipped = a
        .clean_labels
        .iter()
        .zip(a.data.labels())
        .filter(|(c, y)| c != y)
        .count();
    assert_eq!(flipped, 50);
    // redundant columns are linear in the informative ones
    let x = a.data.features();
    let recon = x.columns(0, 6) * &a.mixing;
    assert!((recon - x.columns(6, 2)).amax() < 1e-12);
}

#[test]
fn split_partitions_and_bounds_norms() {
    let data = gen_synthetic(&small_config(3)).unwrap();
    let s = split(&data, 0.7, 0.1, 11).unwrap();
    assert_eq!(s.train.n() + s.validation.n() + s.test.n(), 500);
    let mut ids: Vec<_> = [s.train.ids(), s.validation.ids(), s.test.ids()].concat();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 500);
    let (scaled, _) = norm_bound(&s.train).unwrap();
    assert!(scaled.max_row_norm() <= 1.0 + 1e-12);
}
