use std::path::{Path, PathBuf};
use std::process::Command;

use gridbid::bilevel;
use gridbid_cli::config::{ConfigError, RunConfig};
use gridbid_cli::validate::{self, Suite};
use gridbid_cli::CliError;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridbid"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let data = data_dir();
    let mut text = String::new();
    for f in ["curves", "forecast", "feeder_lines", "feeder_nodes", "pv_trace", "load_trace"] {
        text.push_str(&format!("{f} = {}\n", data.join(format!("{f}.csv")).display()));
    }
    text.push_str("g_cap = 3.74\ntr_max = 5\nv0_pu = 1.01\n");
    text.push_str(body);
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_config_parses() {
    let cfg = RunConfig::load(&data_dir().join("scenario.conf")).unwrap();
    assert_eq!(cfg.sigmas, vec![0.0, 0.1, 0.2]);
    assert_eq!(cfg.gammas, vec![5.0, 30.0]);
    assert_eq!(cfg.rt_hour, 12);
    assert_eq!(cfg.grid.steps_per_slot(), 720);
    assert!((cfg.bases.v0 - 1.01).abs() < 1e-12);
    assert!(cfg.rt_files().is_ok());
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.conf");
    let err = |text: &str| RunConfig::parse(&p, text).unwrap_err();
    assert!(matches!(err("curves"), ConfigError::Syntax { line: 1, .. }));
    assert!(matches!(err("colour = red"), ConfigError::UnknownKey { .. }));
    assert!(matches!(err("seed = 1\nseed = 2"), ConfigError::Duplicate { line: 2, .. }));
    assert!(matches!(err("seed = 1"), ConfigError::Missing(..)));
    assert!(matches!(err("curves = nowhere.csv"), ConfigError::MissingFile { .. }));

    let good = write_config(dir.path(), "");
    assert!(RunConfig::load(&good).is_ok());
    for bad in ["seed = x", "sigmas = 0, -0.1", "load_pf = 1.5", "rt_hour = 24", "dt_rt = 7", "eta = -1"] {
        let p = write_config(dir.path(), &format!("{bad}\n"));
        assert!(matches!(RunConfig::load(&p), Err(ConfigError::BadValue { .. })), "{bad}");
    }
    let p = write_config(dir.path(), "feeder_lines = \n");
    assert!(RunConfig::load(&p).is_err());
}

#[test]
fn exit_codes() {
    assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    assert_eq!(CliError::Input("x".into()).exit_code(), 2);
    assert_eq!(CliError::NotOptimal(1).exit_code(), 1);
    assert_eq!(CliError::ValidationFailed("kkt".into()).exit_code(), 1);
}

#[test]
fn empty_lists_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "gammas =\n")).unwrap();
    let e = gridbid_cli::commands::cmd_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(matches!(e, CliError::Usage(_)));
    assert_eq!(e.exit_code(), 2);

    let cfg = RunConfig::load(&write_config(dir.path(), "sigmas =\n")).unwrap();
    assert!(matches!(gridbid_cli::commands::cmd_da_sweep(&cfg, dir.path()), Err(CliError::Usage(_))));
}

#[test]
fn missing_config_exits_with_two() {
    let out = bin().args(["--config", "/nonexistent/x.conf", "da-bid"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn bad_flag_values_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "");
    let out = bin().arg("--config").arg(&conf).args(["--sigma=-1", "da-bid"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("--config").arg(&conf).args(["validate", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn da_bid_then_rt_run() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "n_samples = 200\n");
    let out_dir = dir.path().join("out");
    let out = bin().arg("--config").arg(&conf).arg("--out").arg(&out_dir).args(["--sigma", "0.1", "da-bid"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["da_decision.csv", "ldr_policy.csv", "forecast_samples.csv", "da_summary.txt"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let rows = bilevel::read_decision(&out_dir.join("da_decision.csv")).unwrap();
    assert_eq!(rows.len(), 24);
    let summary = std::fs::read_to_string(out_dir.join("da_summary.txt")).unwrap();
    assert!(summary.contains("all_optimal = true"));

    let out = bin().arg("--config").arg(&conf).arg("--out").arg(&out_dir).args(["--gamma", "5", "rt-run"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("rt_summary.txt")).unwrap();
    assert!(summary.contains("gamma = 5"));
    assert!(summary.contains("uncontrolled_violation = true"));
    let mut r = csv::Reader::from_path(out_dir.join("rt_trace.csv")).unwrap();
    assert_eq!(r.records().count(), 720 * 36);
}

#[test]
fn rt_run_rejects_short_decision() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "");
    let da = dir.path().join("da.csv");
    bilevel::write_decision(&da, &[bilevel::DaRow::default()]).unwrap();
    let out = bin().arg("--config").arg(&conf).arg("--out").arg(dir.path()).arg("rt-run").arg("--da").arg(&da).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_suites_pass() {
    for suite in [Suite::Dro, Suite::Projection, Suite::Powerflow, Suite::Kkt] {
        let r = validate::run_suite(suite, None, 7).unwrap();
        assert!(r.passed(), "{r}");
    }
    let cfg = RunConfig::load(&data_dir().join("scenario.conf")).unwrap();
    let r = validate::run_suite(Suite::Powerflow, Some(&cfg), 7).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn convergence_suite_on_sample_feeder() {
    let r = validate::run_suite(Suite::Convergence, None, 1).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn suite_names_round_trip() {
    for s in Suite::ALL {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
    }
    assert!("all".parse::<Suite>().is_err());
}
