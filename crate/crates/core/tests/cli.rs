use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn nesya(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nesya")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_verdicts_and_exit_codes() {
    let ok = nesya(&["validate", path(&example("driving.sfa"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout(&ok).trim(), "valid");

    let dir = TempDir::new().unwrap();
    let overlap = dir.path().join("overlap.sfa");
    fs::write(&overlap, "vars: a, b\nstates: q0, q1\ninitial: q0\naccepting: q1\nq0 -> q0 : a\nq0 -> q1 : a | b\n").unwrap();
    let bad = nesya(&["validate", path(&overlap)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("{a}"), "{}", stderr(&bad));

    let strict = nesya(&["validate", "--strict", path(&example("caviar_events.sfa"))]);
    assert_eq!(strict.status.code(), Some(1));
    let completed = nesya(&["validate", path(&example("caviar_events.sfa"))]);
    assert_eq!(completed.status.code(), Some(0));
    assert!(stdout(&completed).contains("completed `moving` with a self-loop"));

    assert_eq!(nesya(&["validate", "/nonexistent/x.sfa"]).status.code(), Some(2));
    let broken = dir.path().join("broken.sfa");
    fs::write(&broken, "vars: a\nstates: q\ninitial: q\nq -> q : a &\n").unwrap();
    let parse = nesya(&["validate", path(&broken)]);
    assert_eq!(parse.status.code(), Some(2));
    assert!(stderr(&parse).contains("line 4"));
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["validate", "compile", "infer", "train", "generate", "bench"] {
        let out = nesya(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
    assert_eq!(nesya(&["--help"]).status.code(), Some(0));
    assert_eq!(nesya(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nesya(&["infer", "--mode", "sideways", "a", "b"]).status.code(), Some(2));
}

#[test]
fn compile_dumps_one_circuit_per_transition() {
    let out = nesya(&["compile", path(&example("driving.sfa"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("# ")).count(), 6);
    assert!(text.contains("# q1 -> q1 : !fast & (tired | blocked)"));
    assert!(text.contains("# q2 -> q2 : true (1 nodes)\n0 const 1\n"));
}

#[test]
fn infer_running_example() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("ps.jsonl");
    fs::write(&data, "{\"features\": [[0.8, 0.3, 0.6], [0.7, 0.9, 0.3]]}\n").unwrap();
    let out = nesya(&["infer", path(&example("driving.sfa")), path(&data)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sequence,acceptance"));
    let value: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 0.742).abs() < 1e-3);

    let one = dir.path().join("one.jsonl");
    fs::write(&one, "{\"features\": [[0.8, 0.3, 0.6]]}\n").unwrap();
    let tag = nesya(&["infer", "--mode", "tag", path(&example("driving.sfa")), path(&one)]);
    let text = stdout(&tag);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "sequence,step,q0,q1,q2");
    assert_eq!(rows.len(), 2);
    let sum: f64 = rows[1].split(',').skip(2).map(|x| x.parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = nesya(&["infer", path(&example("driving.sfa")), path(&empty)]);
    assert_eq!(stdout(&out), "sequence,acceptance\n");

    let wrong = dir.path().join("wrong.jsonl");
    fs::write(&wrong, "{\"features\": [[0.5, 0.5]]}\n").unwrap();
    assert_eq!(nesya(&["infer", path(&example("driving.sfa")), path(&wrong)]).status.code(), Some(1));

    let to_file = dir.path().join("out.csv");
    let quiet = nesya(&["infer", path(&example("driving.sfa")), path(&data), "--out", path(&to_file)]);
    assert!(quiet.stdout.is_empty());
    assert!(fs::read_to_string(&to_file).unwrap().starts_with("sequence,acceptance\n"));
}

fn generate(dir: &Path, name: &str, seed: &str, extra: &[&str]) -> PathBuf {
    let file = dir.join(name);
    let mut args = vec!["generate", "--pattern", "1", "--length", "10", "--seed", seed, "--out", path(&file)];
    args.extend_from_slice(extra);
    let out = nesya(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    file
}

#[test]
fn generate_train_infer_end_to_end() {
    let dir = TempDir::new().unwrap();
    let sfa = example("driving.sfa");
    let train_set = generate(dir.path(), "train.jsonl", "1", &[]);
    let test_set = generate(dir.path(), "test.jsonl", "2", &[]);
    assert_eq!(fs::read_to_string(&train_set).unwrap().lines().count(), 200);

    let model = dir.path().join("model.bin");
    let out = nesya(&["train", path(&sfa), path(&train_set), "--out", path(&model), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("epoch,loss,metric\n"));

    let infer = nesya(&["infer", path(&sfa), path(&test_set), "--model", path(&model)]);
    assert_eq!(infer.status.code(), Some(0), "{}", stderr(&infer));
    let labels: Vec<bool> = fs::read_to_string(&test_set)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["label"] == 1)
        .collect();
    let text = stdout(&infer);
    let predictions: Vec<bool> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() > 0.5)
        .collect();
    assert_eq!(predictions.len(), labels.len());
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    assert!(correct as f64 / labels.len() as f64 >= 0.95, "{correct}/{}", labels.len());
}

#[test]
fn seeded_commands_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = generate(dir.path(), "a.jsonl", "7", &["--n-pos", "20", "--n-neg", "20"]);
    let b = generate(dir.path(), "b.jsonl", "7", &["--n-pos", "20", "--n-neg", "20"]);
    let c = generate(dir.path(), "c.jsonl", "8", &["--n-pos", "20", "--n-neg", "20"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let sfa = example("driving.sfa");
    let ckpt = |name: &str| {
        let file = dir.path().join(name);
        let out = nesya(&[
            "train", path(&sfa), path(&a), "--seed", "3", "--max-epochs", "5", "--out", path(&file),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        (fs::read(&file).unwrap(), out.stdout)
    };
    assert_eq!(ckpt("m1.bin"), ckpt("m2.bin"));
}

#[test]
fn config_file_overlay() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d.jsonl", "1", &["--n-pos", "10", "--n-neg", "10"]);
    let sfa = example("driving.sfa");
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "# short run\nmax_epochs = 3\nlearning_rate = 0.05\n").unwrap();
    let out = nesya(&["train", path(&sfa), path(&data), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 1 + 3);
    let out = nesya(&["train", path(&sfa), path(&data), "--config", path(&cfg), "--max-epochs", "2"]);
    assert_eq!(stdout(&out).lines().count(), 1 + 2);

    fs::write(&cfg, "max_epochs = 3\nwarp_factor = 9\n").unwrap();
    let out = nesya(&["train", path(&sfa), path(&data), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown key `warp_factor`"));

    fs::write(&cfg, "learning_rate = fast\n").unwrap();
    let out = nesya(&["train", path(&sfa), path(&data), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tagged_generation_and_tagging_training() {
    let dir = TempDir::new().unwrap();
    let sfa = example("caviar_events.sfa");
    let data = dir.path().join("tags.jsonl");
    let out = nesya(&[
        "generate", "--sfa", path(&sfa), "--tagged", "--n", "30", "--length", "6", "--seed", "4", "--out", path(&data),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let first: serde_json::Value = serde_json::from_str(fs::read_to_string(&data).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["label"].as_array().unwrap().len(), 6);
    let out = nesya(&["train", path(&sfa), path(&data), "--objective", "tagging", "--max-epochs", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = nesya(&["train", path(&sfa), path(&data), "--max-epochs", "3"]);
    assert_eq!(out.status.code(), Some(1), "tags under the acceptance objective");
}

#[test]
fn bench_prints_csv() {
    let out = nesya(&["bench", "--patterns", "1", "--lengths", "5", "--repetitions", "3", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pattern,states,symbols,length,engine,batch_ms_median,accuracy,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,3,3,5,compiled,"));
    assert!(lines[2].starts_with("1,3,3,5,enumerative,"));
    assert_eq!(nesya(&["bench", "--engines", "gpu"]).status.code(), Some(2));
}
