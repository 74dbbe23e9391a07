use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pogcn::io::write_dataset_tsv;
use pogcn::synthetic::{planted, PlantedSpec};

fn pogcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pogcn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/run.toml")
}

/// Writes a small planted dataset and a config next to it.
fn planted_config(dir: &Path, extra: &str) -> PathBuf {
    let data = planted(&PlantedSpec::small(30), 5);
    write_dataset_tsv(&dir.join("data"), &data).unwrap();
    let text = format!(
        "name = \"planted\"\nlevels = [[\"click\"], [\"favor\"], [\"buy\"]]\ndim = 8\nepochs = 4\nbatch_size = 128\n\
         lr = 0.01\noutput_dir = \"runs\"\n{extra}\n[datasets]\nclick = \"data/click.tsv\"\nfavor = \"data/favor.tsv\"\n\
         buy = \"data/buy.tsv\"\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn error_line(o: &Output) -> Vec<String> {
    let err = stderr(o);
    let line = err.lines().find(|l| l.starts_with("error\t")).unwrap_or_else(|| panic!("no error line in {err:?}"));
    line.split('\t').map(str::to_string).collect()
}

#[test]
fn build_graph_lists_all_seven_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let out = pogcn(&["build-graph", toy_config().to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("users\t3\nitems\t5\nedges\t10\n"));
    let table = std::fs::read_to_string(dir.path().join("graph/ranks.tsv")).unwrap();
    let ranks: Vec<(String, String)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let expected = [
        ("click", "1"),
        ("favor", "2"),
        ("click+favor", "3"),
        ("buy", "4"),
        ("click+buy", "5"),
        ("favor+buy", "6"),
        ("click+favor+buy", "7"),
    ];
    assert_eq!(ranks, expected.map(|(c, r)| (c.to_string(), r.to_string())));
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("click.tsv"), "1\t2\nabc\n").unwrap();
    std::fs::write(dir.path().join("run.toml"), "levels = [[\"click\"]]\n[datasets]\nclick = \"click.tsv\"\n").unwrap();
    let out = pogcn(&["build-graph", dir.path().join("run.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e[1], "ParseError");
    assert!(e[2].contains("click.tsv:2:"), "{e:?}");
}

#[test]
fn missing_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "levels = [[\"click\"]]\n[datasets]\nclick = \"absent.tsv\"\n")
        .unwrap();
    let out = pogcn(&["train", dir.path().join("run.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)[1], "FileNotFound");
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn usage_errors_are_machine_readable() {
    let out = pogcn(&["train", toy_config().to_str().unwrap(), "--sampler-mode", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)[1], "Usage");
    let out = pogcn(&["train", toy_config().to_str().unwrap(), "--tau=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)[1], "Config");
}

#[test]
fn train_eval_recommend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let out = pogcn(&["train", cfg, "--sampler-mode", "uniform", "--tau", "0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = pogcn(&["train", cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(dir.path().join(format!("runs/{}/train_log.tsv", run_hash(&out)))).unwrap();
    assert!(log.starts_with("epoch\tstep\tloss\tval_mean_ndcg\n"));
    assert_eq!(log.lines().count(), 5);

    let out = pogcn(&["eval", cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    let header = table.lines().next().unwrap();
    assert!(header.contains("Recall@20") && header.contains("NDCG@20") && !header.contains("@10"));
    assert_eq!(table.lines().filter(|l| l.starts_with("Mean")).count(), 1);

    let out = pogcn(&["eval", cfg, "--k", "10,20,50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let header = stdout(&out).lines().next().unwrap().to_string();
    for k in [10, 20, 50] {
        assert!(header.contains(&format!("Recall@{k}")) && header.contains(&format!("NDCG@{k}")), "{header}");
    }

    let out = pogcn(&["recommend", cfg, "--k", "3", "0", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().all(|l| l.split('\t').nth(1).unwrap().split(',').count() == 3));
    let out = pogcn(&["recommend", cfg, "0", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("0\t") && lines[1].starts_with("7\t"));
    assert_eq!(lines[0].split('\t').nth(1).unwrap().split(',').count(), 20);

    let out = pogcn(&["recommend", cfg, "nobody"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)[1], "UnknownUser");
}

fn run_hash(train_out: &Output) -> String {
    let text = stdout(train_out);
    let dir = text.lines().find_map(|l| l.strip_prefix("run_dir\t")).unwrap().to_string();
    Path::new(&dir).file_name().unwrap().to_string_lossy().into_owned()
}

#[test]
fn eval_rejects_checkpoint_from_other_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let toy =
        pogcn(&["train", toy_config().to_str().unwrap(), "--output-dir", dir.path().join("toy").to_str().unwrap()]);
    assert!(toy.status.success(), "{}", stderr(&toy));
    let ckpt = stdout(&toy).lines().find_map(|l| l.strip_prefix("checkpoint\t")).unwrap().to_string();

    let cfg = planted_config(dir.path(), "");
    let out = pogcn(&["eval", cfg.to_str().unwrap(), "--checkpoint", &ckpt]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e[1], "DimensionMismatch");
    assert!(e[2].contains("3x5") && e[2].contains("30x60"), "{e:?}");
}

#[test]
fn sweep_writes_manifest_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        planted_config(dir.path(), "epochs = 1\n[sweep]\ngamma = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]\n");
    let cfg = cfg.to_str().unwrap().to_string();
    // `epochs` appears twice in the generated text otherwise
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("epochs = 4\n", "", 1);
    std::fs::write(&cfg, text).unwrap();

    let out = pogcn(&["sweep", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = std::fs::read_to_string(dir.path().join("runs/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    let table = std::fs::read_to_string(dir.path().join("runs/sweep.tsv")).unwrap();
    assert!(table.starts_with("tau\tgamma\tmean_ndcg\n"));
    assert_eq!(table.lines().count(), 11);

    let again = dir.path().join("again");
    let out = pogcn(&["sweep", &cfg, "--output-dir", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let hashes = |m: &str| m.lines().map(|l| l.split('\t').next().unwrap().to_string()).collect::<Vec<_>>();
    let second = std::fs::read_to_string(again.join("manifest.tsv")).unwrap();
    assert_eq!(hashes(&manifest), hashes(&second));
    assert_eq!(table, std::fs::read_to_string(again.join("sweep.tsv")).unwrap());
}

#[test]
fn empty_sweep_grid_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path(), "");
    let out = pogcn(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)[1], "EmptyGrid");
}
