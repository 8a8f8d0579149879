use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lctd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lctd")).args(args).env_remove("DISTRIB_TD_THREADS").output().unwrap()
}

fn run_small(out: &Path) -> Output {
    lctd(&[
        "run",
        "--out",
        out.to_str().unwrap(),
        "--k-list",
        "8,16",
        "--alpha",
        "0.5",
        "--max-iter",
        "4000",
        "--seed",
        "3",
    ])
}

#[test]
fn run_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["trace_linear_ctd_K8_seed3.csv", "trace_linear_ctd_K16_seed3.csv", "run_summary.csv"];
    assert!(run_small(dir.path()).status.success());
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(dir.path().join(n)).unwrap()).collect();
    assert!(run_small(dir.path()).status.success());
    for (name, x) in names.iter().zip(first) {
        assert_eq!(x, fs::read(dir.path().join(name)).unwrap(), "{name}");
    }
    let trace = fs::read_to_string(dir.path().join("trace_linear_ctd_K8_seed3.csv")).unwrap();
    assert!(trace.lines().any(|l| l == "t,loss_l2_mu,loss_w1_mu,theta_norm,diverged,neg_log10_loss"));
    assert!(trace.lines().any(|l| l.starts_with("0,")) && trace.lines().any(|l| l.starts_with("4000,")));
}

#[test]
fn plot_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_small(dir.path()).status.success());
    let trace = dir.path().join("trace_linear_ctd_K8_seed3.csv");
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    for p in [&p1, &p2] {
        let o = lctd(&["plot", trace.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let svg = fs::read_to_string(p1.join("loss.svg")).unwrap();
    assert!(svg.contains("linear_ctd K=8 seed=3"));
    assert_eq!(svg, fs::read_to_string(p2.join("loss.svg")).unwrap());
}

#[test]
fn bad_config_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "gamma = 0.75\nnot_a_key = 1\n").unwrap();
    let o = lctd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error:") && err.contains("not_a_key"), "{err}");

    let o = lctd(&["run", "--max-iter", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn verify_exit_status_tracks_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lctd(&["verify", "--k-list", "4,16", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = fs::read_to_string(dir.path().join("verify.txt")).unwrap();
    assert!(!text.contains("status=fail"));

    let o = lctd(&["verify", "--k-list", "16", "--unnormalized-features", "--out", out]);
    assert!(!o.status.success());
    let text = fs::read_to_string(dir.path().join("verify.txt")).unwrap();
    assert!(text.lines().any(|l| l.contains("status=fail") && l.contains("C_A")), "{text}");
}

#[test]
fn alpha_search_writes_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let o = lctd(&[
        "alpha-search",
        "--k-list",
        "8",
        "--max-iter",
        "20000",
        "--epsilon",
        "1e-4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("alpha_search.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("linear_ctd,8,")).unwrap();
    let f: Vec<f64> = row.split(',').skip(2).take(2).map(|x| x.parse().unwrap()).collect();
    assert!(f[0] < f[1] && f[1] / f[0] <= 1.05 + 1e-12, "{row}");
}
