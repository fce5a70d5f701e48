//! End-to-end tests driving the compiled binary against the bundled
//! example economy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Output;

use watercge_core::accounts::{AccountMeta, Sam, SamLayout};
use watercge_core::calibrate::calibrate;
use watercge_core::config::ModelConfig;
use watercge_core::metrics;
use watercge_core::model::WaterMobility;

fn watercge(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_watercge"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn watercge")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/model/model.toml")
}

fn config_arg() -> String {
    shipped_config().display().to_string()
}

/// Relative path to file bytes for every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("prefix").to_path_buf();
                files.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    files
}

// ── sam ──────────────────────────────────────────────────────────────────────

#[test]
fn validate_accepts_the_balanced_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(tmp.path(), &["sam", "validate", "--config", &config_arg()]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("balanced: 45 accounts"));
}

#[test]
fn validate_lists_raw_gaps_and_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = shipped_config().with_file_name("raw_sam.csv");
    let out = watercge(
        tmp.path(),
        &[
            "sam",
            "validate",
            "--config",
            &config_arg(),
            "--sam",
            &raw.display().to_string(),
        ],
    );
    assert_eq!(exit_code(&out), 2, "{out:?}");
    let text = stdout(&out);
    for account in ["t_imp", "marg", "row"] {
        assert!(text.contains(account), "missing {account} in:\n{text}");
    }
}

#[test]
fn balance_output_revalidates_clean() {
    let tmp = tempfile::tempdir().unwrap();

    // Shift a transfer between two agents so both gaps stay inside the
    // adjustable macro sets and still sum to zero.
    let sam_path = shipped_config().with_file_name("sam.csv");
    let text = std::fs::read_to_string(&sam_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let hh_col = header.iter().position(|c| *c == "hh").unwrap();
    let gov_row = lines.iter().position(|l| l.starts_with("gov,")).unwrap();
    let mut cells: Vec<String> = lines[gov_row].split(',').map(str::to_string).collect();
    let bumped: f64 = cells[hh_col].parse::<f64>().unwrap() + 5.0;
    cells[hh_col] = bumped.to_string();
    lines[gov_row] = cells.join(",");
    let perturbed = tmp.path().join("perturbed.csv");
    std::fs::write(&perturbed, lines.join("\n") + "\n").unwrap();

    let out = watercge(
        tmp.path(),
        &[
            "sam",
            "balance",
            "--config",
            &config_arg(),
            "--sam",
            &perturbed.display().to_string(),
            "--out",
            "balanced.csv",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("total adjustment:"));

    let check = watercge(
        tmp.path(),
        &[
            "sam",
            "validate",
            "--config",
            &config_arg(),
            "--sam",
            "balanced.csv",
        ],
    );
    assert_eq!(exit_code(&check), 0, "{check:?}");
}

#[test]
fn aggregate_with_identity_map_reproduces_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let meta = AccountMeta::load(&shipped_config().with_file_name("accounts.csv"), b',').unwrap();
    let mut map = String::from("detailed_code,model_code,preserved\n");
    for code in meta.codes() {
        map.push_str(&format!("{code},{code},1\n"));
    }
    std::fs::write(tmp.path().join("identity.csv"), map).unwrap();

    let out = watercge(
        tmp.path(),
        &[
            "sam",
            "aggregate",
            "--config",
            &config_arg(),
            "--map",
            "identity.csv",
            "--out",
            "agg.csv",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let merged = std::fs::read(tmp.path().join("agg.csv")).unwrap();
    let original = std::fs::read(shipped_config().with_file_name("sam.csv")).unwrap();
    assert_eq!(merged, original);
}

#[test]
fn augment_reproduces_the_shipped_model_sam() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(
        tmp.path(),
        &[
            "sam",
            "augment",
            "--config",
            &config_arg(),
            "--out",
            "model_sam.csv",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let built = std::fs::read(tmp.path().join("model_sam.csv")).unwrap();
    let shipped = std::fs::read(shipped_config().with_file_name("sam.csv")).unwrap();
    assert_eq!(built, shipped);
}

// ── run ──────────────────────────────────────────────────────────────────────

#[test]
fn run_at_zero_shock_prints_the_benchmark_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(
        tmp.path(),
        &["run", "B", "--config", &config_arg(), "--grid", "0"],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");

    let csv = std::fs::read_to_string(tmp.path().join("runs/B/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);

    // The solver accepts the calibrated point unchanged, so every cell
    // must print exactly the benchmark value.
    let cfg = ModelConfig::load(&shipped_config()).unwrap();
    let meta = AccountMeta::load(&cfg.resolve(&cfg.files.accounts), b',').unwrap();
    let sam = Sam::load(&cfg.resolve(&cfg.files.sam), &SamLayout::new(meta)).unwrap();
    let rates =
        watercge_core::augment::WaterRates::load(&cfg.resolve(&cfg.files.water_rates)).unwrap();
    let model = calibrate(&sam, &cfg, &rates, WaterMobility::Mobile).unwrap();
    let bench = metrics::bundle(&model, &model.exogenous, model.benchmark.as_slice());

    let mut expected = format!(
        "0,{},{},{},{}",
        bench.water_total, bench.gdp, bench.tabs, bench.trade_balance
    );
    for income in bench.incomes.values() {
        expected.push_str(&format!(",{income}"));
    }
    expected.push_str(",0");
    assert_eq!(lines[1], expected);
}

#[test]
fn run_emits_nine_rows_and_replays_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "A2".to_string(),
            "--config".to_string(),
            config_arg(),
            "--grid".to_string(),
            "-40..40".to_string(),
            "--out".to_string(),
            out.to_string(),
        ]
    };
    for (out_dir, extra) in [("first", None), ("second", None), ("par", Some("2"))] {
        let mut a = args(out_dir);
        if let Some(threads) = extra {
            a.push("--parallel".to_string());
            a.push(threads.to_string());
        }
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = watercge(tmp.path(), &refs);
        assert_eq!(exit_code(&out), 0, "{out:?}");
    }

    let csv = std::fs::read_to_string(tmp.path().join("first/A2/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10, "header plus nine grid rows");

    let first = tree(&tmp.path().join("first"));
    assert_eq!(first, tree(&tmp.path().join("second")), "rerun differs");
    assert_eq!(first, tree(&tmp.path().join("par")), "parallel run differs");
}

#[test]
fn run_writes_solver_reports_per_shock() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(
        tmp.path(),
        &[
            "run",
            "A1",
            "--config",
            &config_arg(),
            "--grid",
            "-40..40:80",
            "--trace",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    for shock in ["-40", "40"] {
        let report = tmp.path().join("runs/A1").join(shock).join("report.txt");
        let text = std::fs::read_to_string(&report).unwrap();
        assert!(text.contains("iterations:"), "{text}");
        assert!(
            text.contains("iteration,residual,step,active_bounds"),
            "--trace should add the iteration table:\n{text}"
        );
        let state = tmp.path().join("runs/A1").join(shock).join("state.csv");
        assert!(state.exists());
    }
}

// ── sensitivity ──────────────────────────────────────────────────────────────

#[test]
fn rainfed_baseline_share_gives_a_zero_delta_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::load(&shipped_config()).unwrap();
    let baseline = cfg.water.irrigated_share.to_string();
    let out = watercge(
        tmp.path(),
        &[
            "sensitivity",
            "rainfed",
            "--config",
            &config_arg(),
            "--shares",
            &baseline,
            "--grid",
            "-20..20:20",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let csv = std::fs::read_to_string(tmp.path().join("runs/sensitivity/rainfed/deltas.csv"))
        .unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.ends_with(",0"), "nonzero delta in {row}");
    }
}

#[test]
fn valuation_baseline_multiplier_gives_zero_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(
        tmp.path(),
        &[
            "sensitivity",
            "valuation",
            "--config",
            &config_arg(),
            "--multipliers",
            "1",
            "--grid",
            "-20..20:20",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let csv = std::fs::read_to_string(tmp.path().join("runs/sensitivity/valuation/responses.csv"))
        .unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[0], "1");
    for (name, value) in header.iter().zip(&row) {
        if name.ends_with("_delta") {
            assert_eq!(*value, "0", "{name} should be exactly zero");
        }
    }
}

// ── contract violations ──────────────────────────────────────────────────────

#[test]
fn input_contract_violations_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_arg();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "Z9", "--config", &config],
        vec!["run", "B", "--config", &config, "--grid", "10..0"],
        vec!["run", "B", "--config", &config, "--grid", "-80..80"],
        vec!["run", "B", "--config", "missing.toml"],
        vec![
            "sensitivity",
            "valuation",
            "--config",
            &config,
            "--multipliers",
            "0.5",
        ],
    ];
    for args in cases {
        let out = watercge(tmp.path(), &args);
        assert_eq!(exit_code(&out), 2, "{args:?} -> {out:?}");
        assert!(!out.stderr.is_empty(), "{args:?} should print a diagnostic");
    }
}

// ── fixture ──────────────────────────────────────────────────────────────────

#[test]
fn fixture_bundle_feeds_the_other_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = watercge(tmp.path(), &["fixture", "--out", "ex"]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    for name in watercge_core::fixture::FILES {
        assert!(tmp.path().join("ex").join(name).exists(), "missing {name}");
    }
    let check = watercge(
        tmp.path(),
        &["sam", "validate", "--config", "ex/model.toml"],
    );
    assert_eq!(exit_code(&check), 0, "{check:?}");
}
