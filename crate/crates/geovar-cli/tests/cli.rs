//! Integration tests of the `geovar` binary: exit codes, file outputs,
//! and the per-subcommand contract examples.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geovar::geodesy::{haversine_km, GeoCoord};
use geovar::semivariogram::{evaluate_spherical, read_model_file, SphericalModel};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_geovar")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn gen_small(dir: &Path, out: &str, n: usize, seed: u64) {
    let st = run_in(
        dir,
        &[
            "gen",
            "--n",
            &n.to_string(),
            "--range-km",
            "800",
            "--sill",
            "1.0",
            "--nugget",
            "0.2",
            "--seed",
            &seed.to_string(),
            "--lat-min",
            "-10",
            "--lat-max",
            "10",
            "--lon-min",
            "-10",
            "--lon-max",
            "10",
            "--out",
            out,
        ],
    );
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen"]);
    assert_eq!(out.status.code(), Some(1));
    let unknown = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("variogram"));
}

#[test]
fn gen_same_flags_identical_bytes_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "a.gemb", 120, 7);
    gen_small(dir.path(), "b.gemb", 120, 7);
    let a = std::fs::read(dir.path().join("a.gemb")).unwrap();
    let b = std::fs::read(dir.path().join("b.gemb")).unwrap();
    assert_eq!(a, b);
    let d = geovar::Dataset::load_binary(&dir.path().join("a.gemb")).unwrap();
    assert_eq!(d.len(), 120);
    // the resolved-config sidecar exists and names the command
    let sidecar = std::fs::read_to_string(dir.path().join("a.gemb.config")).unwrap();
    assert!(sidecar.contains("command = gen"));
    assert!(sidecar.contains("seed = 7"));
}

#[test]
fn eval_missing_checkpoint_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "d.gemb", 50, 1);
    let out = run_in(
        dir.path(),
        &["eval", "--checkpoint", "nope.gckpt", "--data", "d.gemb"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn variogram_unreadable_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["variogram", "--data", "missing.gemb"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_with_too_few_bins_is_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("v.csv"),
        "h_lo,h_center,h_hi,gamma_hat,pair_count\n0,50,100,0.2,5\n100,150,200,0.3,5\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["fit", "--variogram", "v.csv", "--out", "m.txt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_zero_variance_is_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["gen", "--n", "50", "--sill", "0", "--nugget", "0", "--out", "z.gemb"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_threads_env_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["gen", "--n", "10", "--out", "x.gemb"])
        .env("GEOVAR_THREADS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn constant_features_give_flat_zero_curve() {
    let dir = tempfile::tempdir().unwrap();
    // hand-build a .gemb with identical features everywhere
    let records: Vec<geovar::GeoTaggedEmbedding> = (0..40)
        .map(|i| geovar::GeoTaggedEmbedding {
            id: i,
            coord: GeoCoord::new((i as f64) * 0.2 - 4.0, (i as f64) * 0.3 - 6.0).unwrap(),
            features: vec![0.6, 0.8],
        })
        .collect();
    let d = geovar::Dataset::new(records, 2, "const".into()).unwrap();
    d.save_binary(&dir.path().join("const.gemb")).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "variogram", "--data", "const.gemb", "--bins", "10", "--h-max-km", "3000", "--out",
            "v.csv",
        ],
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("v.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let count: u64 = fields[4].parse().unwrap();
        if count > 0 {
            assert_eq!(fields[3], "0", "nonempty bin must be exactly zero: {line}");
        } else {
            assert_eq!(fields[3], "", "empty bins carry an empty gamma field: {line}");
        }
    }
}

/// Writes a variogram CSV sampled exactly from a model curve.
fn write_exact_curve_csv(path: &Path, model: &SphericalModel, n_bins: usize, h_max: f64) {
    let mut text = String::from("h_lo,h_center,h_hi,gamma_hat,pair_count\n");
    let w = h_max / n_bins as f64;
    for b in 0..n_bins {
        let h_lo = b as f64 * w;
        let h_hi = h_lo + w;
        let h_c = 0.5 * (h_lo + h_hi);
        let g = evaluate_spherical(model, h_c).unwrap();
        text.push_str(&format!("{h_lo},{h_c},{h_hi},{g},100\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn fit_of_exact_curve_recovers_parameters_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let truth = SphericalModel::new(0.1, 0.4, 1500.0).unwrap();
    write_exact_curve_csv(&dir.path().join("v.csv"), &truth, 20, 5000.0);
    let out = run_in(dir.path(), &["fit", "--variogram", "v.csv", "--out", "m1.txt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (m1, _) = read_model_file(&dir.path().join("m1.txt")).unwrap();
    assert!((m1.nugget() - 0.1).abs() / 0.1 < 1e-4);
    assert!((m1.partial_sill() - 0.4).abs() / 0.4 < 1e-4);
    assert!((m1.range_km() - 1500.0).abs() / 1500.0 < 1e-4);

    // refit the fitted model's own curve: a fixed point within 1e-6
    write_exact_curve_csv(&dir.path().join("v2.csv"), &m1, 20, 5000.0);
    let out = run_in(dir.path(), &["fit", "--variogram", "v2.csv", "--out", "m2.txt"]);
    assert!(out.status.success());
    let (m2, _) = read_model_file(&dir.path().join("m2.txt")).unwrap();
    assert!((m2.nugget() - m1.nugget()).abs() <= 1e-6 * m1.nugget().max(1.0));
    assert!((m2.partial_sill() - m1.partial_sill()).abs() <= 1e-6 * m1.partial_sill());
    assert!((m2.range_km() - m1.range_km()).abs() <= 1e-6 * m1.range_km());
}

fn pipeline(dir: &Path) -> (PathBuf, PathBuf) {
    gen_small(dir, "d.gemb", 200, 3);
    let out = run_in(
        dir,
        &[
            "variogram", "--data", "d.gemb", "--bins", "25", "--h-max-km", "3000", "--out",
            "v.csv", "--fit", "m.txt",
        ],
    );
    assert!(out.status.success());
    (dir.join("d.gemb"), dir.join("m.txt"))
}

#[test]
fn train_writes_log_checkpoint_and_reweight_counters() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = pipeline(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "train", "--data", "d.gemb", "--model", "m.txt", "--epochs", "2", "--batch-size",
            "16", "--scales", "2", "--f-pairs", "4", "--hidden", "16", "--d-emb", "8",
            "--out", "e.gckpt", "--log", "log.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,mean_loss,mean_weight,hard_count,false_count,val_acc25,val_acc200,val_acc750"
    );
    assert_eq!(lines.count(), 2);
    // reweighting was active: hard/false counters appear (nonzero mean weight column)
    let row: Vec<&str> = log.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().unwrap() > 0.0);
    assert!(geovar::DualEncoder::load_checkpoint(&dir.path().join("e.gckpt")).is_ok());
    // baseline flag works too
    let out = run_in(
        dir.path(),
        &[
            "train", "--data", "d.gemb", "--model", "m.txt", "--no-reweight", "--epochs", "1",
            "--batch-size", "16", "--scales", "2", "--f-pairs", "4", "--hidden", "16",
            "--d-emb", "8", "--out", "b.gckpt", "--log", "blog.csv",
        ],
    );
    assert!(out.status.success());
    let blog = std::fs::read_to_string(dir.path().join("blog.csv")).unwrap();
    let row: Vec<&str> = blog.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "0", "baseline run classifies nothing as hard");
}

#[test]
fn eval_report_nests_thresholds_and_matches_columns() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "train", "--data", "d.gemb", "--no-reweight", "--epochs", "1", "--batch-size", "16",
            "--scales", "2", "--f-pairs", "4", "--hidden", "16", "--d-emb", "8", "--out",
            "e.gckpt", "--log", "log.csv",
        ],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &["eval", "--checkpoint", "e.gckpt", "--data", "d.gemb", "--out", "r.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,mean_loss,mean_weight,hard_count,false_count,val_acc25,val_acc200,val_acc750"
    );
    let row: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let acc25: f64 = row[5].parse().unwrap();
    let acc200: f64 = row[6].parse().unwrap();
    let acc750: f64 = row[7].parse().unwrap();
    assert!(acc25 <= acc200 && acc200 <= acc750);
}

#[test]
fn untrained_encoder_scores_near_uniform_prediction_baseline() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path(), "d.gemb", 400, 11);
    // epochs 0 writes the seeded initial parameters untouched
    let out = run_in(
        dir.path(),
        &[
            "train", "--data", "d.gemb", "--no-reweight", "--epochs", "0", "--batch-size", "16",
            "--scales", "2", "--f-pairs", "4", "--hidden", "16", "--d-emb", "8",
            "--val-fraction", "0", "--out", "u.gckpt", "--log", "ulog.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run_in(
        dir.path(),
        &["eval", "--checkpoint", "u.gckpt", "--data", "d.gemb", "--out", "u.csv"],
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let acc750: f64 = row[7].parse().unwrap();

    // uniform-prediction baseline, simulated with an independent seeded
    // draw over the same gallery coordinates
    use rand::{Rng, SeedableRng};
    let d = geovar::Dataset::load_binary(&dir.path().join("d.gemb")).unwrap();
    let coords: Vec<GeoCoord> = d.records().iter().map(|r| r.coord).collect();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
    let mut hits = 0u32;
    let trials = 20_000;
    for _ in 0..trials {
        let q = coords[rng.random_range(0..coords.len())];
        let p = coords[rng.random_range(0..coords.len())];
        if haversine_km(q, p) <= 750.0 {
            hits += 1;
        }
    }
    let uniform = hits as f64 / trials as f64;
    assert!(
        acc750 >= uniform / 4.0 && acc750 <= (4.0 * uniform).min(1.0),
        "untrained acc750 {acc750} too far from uniform baseline {uniform}"
    );
}

#[test]
fn weights_audit_rows_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "weights", "audit", "--data", "d.gemb", "--model", "m.txt", "--sample", "400",
            "--seed", "9", "--s1", "0.5", "--s2", "0.5", "--theta2-km", "25", "--delta-scale",
            "2", "--out", "a.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (model, _) = read_model_file(&dir.path().join("m.txt")).unwrap();
    let theta1 = model.range_km();
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "anchor_id,neg_id,d_km,d_cos,gamma_expected,delta,weight,class"
    );
    let mut n_rows = 0;
    for line in lines {
        n_rows += 1;
        let f: Vec<&str> = line.split(',').collect();
        let d_km: f64 = f[2].parse().unwrap();
        let d_cos: f64 = f[3].parse().unwrap();
        let expected: f64 = f[4].parse().unwrap();
        let delta: f64 = f[5].parse().unwrap();
        let weight: f64 = f[6].parse().unwrap();
        let class = f[7];
        // every row lands in exactly one class
        assert!(["hard", "false", "neutral"].contains(&class), "{class}");
        // the deviation column is reproducible from its inputs
        assert!((delta - (d_cos - expected)).abs() < 1e-9);
        // the expected column is the scaled fitted curve
        let gamma = evaluate_spherical(&model, d_km).unwrap();
        assert!((expected - 2.0 * gamma).abs() < 1e-9);
        // the weight column reproduces the branch formula (then clamp)
        let raw = if delta < 0.0 && d_km > theta1 {
            (-delta / 0.5).exp()
        } else if delta < 0.0 && d_km < 25.0 {
            (delta / 0.5).exp()
        } else {
            1.0
        };
        assert!((weight - raw.clamp(0.05, 20.0)).abs() < 1e-9);
        match class {
            "hard" => assert!(delta < 0.0 && d_km > theta1),
            "false" => assert!(delta < 0.0 && d_km < 25.0),
            _ => assert!(delta >= 0.0 || (25.0..=theta1).contains(&d_km)),
        }
    }
    assert_eq!(n_rows, 400);
}
