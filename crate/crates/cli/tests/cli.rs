use std::path::Path;
use std::process::Command;

use ipsim_cli::spec::ExperimentSpec;
use ipsim_cli::{compute, run_experiment, sweep};
use ipsim_core::generators::Adjacency;
use ipsim_core::rng::split;
use ipsim_core::ruleset::parse_rule_set;

const SPEC: &str = r#"
name = "sis-path"
seed = 7
replicas = 400
t_grid = [0.5, 1.0]
quantities = ["marginals", "nimfa", "oracle", "subpop_variance", "collision", "blowup_functional", "ghost", "bounds"]

[graph]
kind = "path"
n = 5

[model]
kind = "sis"
recovery = 0.3

[init]
probs = { S = 0.6, I = 0.4 }

[options]
subset_size = 3
pairs = [[0, 1], [1, 3]]
roots = [0, 2]
"#;

fn ipsim(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ipsim")).args(args).current_dir(dir).output().unwrap()
}

fn read_dir(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn bundle_is_byte_identical_across_thread_counts() {
    let spec = ExperimentSpec::from_toml(SPEC).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&spec, &a, 1).unwrap();
    run_experiment(&spec, &b, 3).unwrap();
    let (fa, fb) = (read_dir(&a), read_dir(&b));
    assert_eq!(fa.len(), spec.quantities.len());
    assert_eq!(fa, fb);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["truncation"]["ghost"].as_f64().unwrap() == 0.0);
}

#[test]
fn forward_and_oracle_csvs_line_up() {
    let bundle = compute(&ExperimentSpec::from_toml(SPEC).unwrap()).unwrap();
    let mc: Vec<&str> = bundle.files["marginals.csv"].lines().collect();
    let ex: Vec<&str> = bundle.files["oracle.csv"].lines().collect();
    assert_eq!(mc.len(), ex.len());
    for (a, b) in mc.iter().zip(&ex).skip(1) {
        let a: Vec<&str> = a.split(',').collect();
        let b: Vec<&str> = b.split(',').collect();
        assert_eq!(a[..3], b[..3]);
        let (y, se, x): (f64, f64, f64) = (a[3].parse().unwrap(), a[4].parse().unwrap(), b[3].parse().unwrap());
        assert!((y - x).abs() <= 4.5 * se.max(1e-3), "{a:?} vs {b:?}");
    }
}

#[test]
fn single_value_sweep_matches_experiment() {
    let template: toml::Value = toml::from_str(SPEC).unwrap();
    let swept = sweep(&template, "graph.n", &["5".to_string()]).unwrap();
    let mut spec = ExperimentSpec::from_toml(SPEC).unwrap();
    spec.seed = split(7, 0);
    let direct = compute(&spec).unwrap();
    for (name, text) in &direct.files {
        let agg = &swept.files[&format!("sweep_{name}")];
        let stripped: Vec<String> = agg.lines().skip(1).map(|l| l.splitn(3, ',').nth(2).unwrap().to_string()).collect();
        let original: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(stripped, original, "{name}");
    }
    assert!(sweep(&template, "graph.nope", &["1".to_string()]).is_err());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = SPEC.replace("quantities = [\"marginals\", \"nimfa\", \"oracle\", \"subpop_variance\", \"collision\", \"blowup_functional\", \"ghost\", \"bounds\"]", "quantities = []");
    std::fs::write(tmp.path().join("empty.toml"), empty).unwrap();
    let out = ipsim(&["experiment", "empty.toml", "--out", "o1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let big = SPEC
        .replace("n = 5", "n = 24")
        .replace("quantities = [\"marginals\"", "quantities = [\"oracle\", \"marginals\"");
    let big = big.replace(", \"oracle\", \"subpop", ", \"subpop");
    std::fs::write(tmp.path().join("big.toml"), big).unwrap();
    let out = ipsim(&["experiment", "big.toml", "--out", "o2"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));

    std::fs::write(tmp.path().join("ok.toml"), SPEC).unwrap();
    let out = ipsim(&["experiment", "ok.toml", "--out", "o3", "--threads", "2", "--replicas", "50"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("o3/manifest.json").exists());
}

#[test]
fn linf_counterexample_preset() {
    let spec = ExperimentSpec::from_toml("preset = \"linf-counterexample\"").unwrap();
    let bundle = compute(&spec).unwrap();
    let csv = &bundle.files["linf_counterexample.csv"];
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let gap: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(gap < 1e-6, "{line}");
    }
}

#[test]
fn regular_scaling_preset_reports_a_decreasing_error() {
    let text = "preset = \"regular-scaling\"\nreplicas = 3000\nseed = 2\n[graph]\nkind = \"random-regular\"\nn = 200\n[options]\ndegrees = [4, 16]\n";
    let bundle = compute(&ExperimentSpec::from_toml(text).unwrap()).unwrap();
    let rows: Vec<f64> = bundle.files["regular_scaling.csv"]
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(rows[0] > rows[1] && rows[1] > 0.0, "{rows:?}");
    let slope: f64 = bundle.files["regular_scaling_fit.csv"].lines().nth(1).unwrap().parse().unwrap();
    assert!((-1.5..-0.5).contains(&slope), "{slope}");
}

#[test]
fn model_and_generate_subcommands_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("s.toml"), SPEC).unwrap();
    let out = ipsim(&["model", "s.toml"], tmp.path());
    assert!(out.status.success());
    let sys = parse_rule_set(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(sys.n_vertices(), 5);
    assert_eq!(sys.rule_count(), 8 + 5);

    let out = ipsim(&["generate", "--kind", "erdos-renyi", "--n", "50", "--lambda", "3", "--seed", "4"], tmp.path());
    assert!(out.status.success());
    let g = Adjacency::from_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(g.n, 50);

    std::fs::write(tmp.path().join("r.rules"), ipsim(&["model", "s.toml"], tmp.path()).stdout).unwrap();
    let out = ipsim(&["nimfa", "--rules", "r.rules", "--init", "S=0.6,I=0.4", "--grid", "0,1"], tmp.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 2 * 5 * 2);
    let out = ipsim(&["bounds", "--rules", "r.rules", "--grid", "1"], tmp.path());
    assert!(String::from_utf8(out.stdout).unwrap().contains("l1_lower_theta"));
    let out = ipsim(
        &["backward", "--rules", "r.rules", "--what", "collision", "--root", "0", "--j", "4", "--replicas", "100"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_specs_parse_and_build() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("specs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = ExperimentSpec::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        spec.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if spec.preset.is_none() {
            ipsim_cli::build::build(&spec).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        count += 1;
    }
    assert_eq!(count, 5);
}
