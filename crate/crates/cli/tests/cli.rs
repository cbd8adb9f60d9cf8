use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spurious-lab"))
        .args(args)
        .env("SPURIOUS_LAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const EXPERIMENT: &str = r#"
[task]
s = 2
c = 3
u = 1
lambda = 0.9

[train]
epochs = 4
learning_rate = 0.01
width = 16
seed = 7

[metrics]
probe_samples = 200

[data]
size = 400
seed = 1

[snapshots]
every = 2
"#;

#[test]
fn fourier_prints_exact_and_sampled_coefficients() {
    assert_eq!(stdout(&cli(&["fourier", "--fn", "sc", "--d", "3", "--set", "1"])).trim(), "0.5");
    assert_eq!(stdout(&cli(&["fourier", "--fn", "parity", "--d", "4", "--set", "1,2,3,4"])).trim(), "1");
    assert_eq!(stdout(&cli(&["fourier", "--fn", "parity", "--d", "4", "--set", "1,2"])).trim(), "0");
    let mc = stdout(&cli(&["fourier", "--fn", "sc", "--d", "3", "--set", "1", "--samples", "1000"]));
    assert!(mc.contains('±'), "{mc}");
    let bad = cli(&["fourier", "--fn", "sc", "--d", "3", "--set", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn theory_renders_text_and_json() {
    let text = stdout(&cli(&["theory", "--n", "7", "--s", "2", "--c", "4", "--lambda", "0.9"]));
    assert!(text.contains("bayes_margin     2.19722457734"), "{text}");
    let json = stdout(&cli(&["theory", "--n", "7", "--s", "2", "--c", "4", "--lambda", "0.9", "--json"]));
    assert!(json.trim_start().starts_with('{') && json.contains("bayes_margin"), "{json}");
}

#[test]
fn train_then_inspect_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, EXPERIMENT).unwrap();
    let run = dir.path().join("run");
    stdout(&cli(&["train", "--config", p(&cfg), "--out", p(&run)]));
    for f in ["manifest.json", "metrics.csv", "data.tsv", "model_epoch_2.snapshot", "model_epoch_4.snapshot"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.starts_with("epoch,"));

    let snap = run.join("model_epoch_4.snapshot");
    let m = stdout(&cli(&["metrics", "--model", p(&snap), "--config", p(&cfg), "--exact"]));
    assert_eq!(m.lines().count(), 2);
    let table = dir.path().join("table.csv");
    for _ in 0..2 {
        stdout(&cli(&["metrics", "--model", p(&snap), "--config", p(&cfg), "--append", p(&table)]));
    }
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 3);

    let decoded = stdout(&cli(&[
        "decode", "--model", p(&snap), "--config", p(&cfg), "--target", "spurious", "--samples", "300",
    ]));
    let v: f64 = decoded.trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&v));

    stdout(&cli(&["debias", "--run", p(&run), "--method", "jtt", "--method", "kl"]));
    let jaccard = fs::read_to_string(run.join("jaccard.csv")).unwrap();
    assert_eq!(jaccard.lines().next().unwrap(), "epoch,method,jaccard,containment,predicted");
    assert_eq!(jaccard.lines().count(), 1 + 2 * 2);

    for fig in ["correlations", "decoded", "jaccard", "fig7"] {
        let csv = stdout(&cli(&["plotdata", "--figure", fig, "--input", p(&run)]));
        assert!(csv.lines().count() > 1, "{fig}: {csv}");
    }
    let fig6 = stdout(&cli(&["plotdata", "--figure", "margins"]));
    assert!(fig6.lines().count() > 10);
}

#[test]
fn gen_writes_reproducible_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("task.toml");
    fs::write(&task, "s = 2\nc = 4\nu = 1\nlambda = 0.75\n").unwrap();
    let (a, b) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
    for out in [&a, &b] {
        stdout(&cli(&["gen", "--config", p(&task), "--size", "300", "--seed", "3", "--out", p(out)]));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 300);
    let first = text.lines().next().unwrap();
    let cols: Vec<&str> = first.split('\t').collect();
    assert_eq!(cols.len(), 3);
    assert_eq!(cols[0].len(), 7);
}

#[test]
fn sweep_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    let text = EXPERIMENT.replace("[data]\nsize = 400\nseed = 1\n", "")
        + "\n[sweep]\nlambdas = [0.6, 0.9]\nspurious_degrees = [0, 2]\nrepetitions = 2\nthreshold = 0.5\n";
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("sweep");
    stdout(&cli(&["sweep", "--config", p(&cfg), "--out", p(&out)]));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 8);
    let fig3 = stdout(&cli(&["plotdata", "--figure", "convergence", "--input", p(&out)]));
    assert!(fig3.lines().count() > 1);
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[task]\ns = 2\nc = 3\nlambda = 1.5\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(cli(&["train", "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[task]\ns = 2\nc = 3\nlambda = 0.9\ncolour = 1\n").unwrap();
    assert_eq!(cli(&["train", "--config", p(&unknown), "--out", p(&out)]).status.code(), Some(2));
    let missing = dir.path().join("nope.snapshot");
    let task = dir.path().join("task.toml");
    fs::write(&task, "s = 2\nc = 3\nlambda = 0.9\n").unwrap();
    let r = cli(&["metrics", "--model", p(&missing), "--config", p(&task)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error:"));
}
