use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pipeline.toml")
}

fn emrkg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emrkg"))
        .arg("--config")
        .arg(config())
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_1() {
    let bin = env!("CARGO_BIN_EXE_emrkg");
    assert_eq!(Command::new(bin).output().unwrap().status.code(), Some(1));
    assert_eq!(Command::new(bin).arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_emrkg"))
        .args(["--config", "/nonexistent/pipeline.toml", "convert"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(emrkg(&["--threshold", "2", "kb-load"], tmp.path()).status.code(), Some(2));

    let cfg = tmp.path().join("extra.toml");
    let text = std::fs::read_to_string(config()).unwrap();
    std::fs::write(&cfg, format!("{text}\nunexpected = 1\n")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_emrkg")).arg("--config").arg(&cfg).arg("convert").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, text.replace("[train]", "[train]\nlearning_rte = 0.1")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_emrkg")).arg("--config").arg(&cfg).arg("convert").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let kb = tmp.path().join("bad.jsonl");
    std::fs::write(&kb, "not json\n").unwrap();
    let out = emrkg(&["--kb", kb.to_str().unwrap(), "kb-load"], &tmp.path().join("a"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(emrkg(&["train"], &tmp.path().join("b")).status.code(), Some(3));
}

#[test]
fn pipeline_equals_stages_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let staged = tmp.path().join("staged");
    for stage in ["convert", "split", "augment", "train", "tag", "evaluate", "kb-load", "align", "fuse", "export"] {
        let out = emrkg(&[stage], &staged);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let whole = tmp.path().join("whole");
    assert!(emrkg(&["pipeline"], &whole).status.success());

    let mut a = files_under(&staged);
    let mut b = files_under(&whole);
    assert!(b.remove(Path::new("manifest.json")).is_some());
    a.remove(Path::new("manifest.json"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs", k.display());
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(whole.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 20240501);
    assert!(manifest["config_sha256"].as_str().is_some_and(|h| h.len() == 64));
}

#[test]
fn query_prints_reached_names() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(emrkg(&["kb-load"], tmp.path()).status.success());
    let graph = tmp.path().join("kb_graph.json");
    let out = emrkg(
        &[
            "query",
            "--label",
            "Disease",
            "--name",
            "肝癌",
            "--relation",
            "RecommendedFood",
            "--graph",
            graph.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "西兰花\n鲫鱼\n鸡蛋\n");

    let out = emrkg(
        &[
            "query",
            "--label",
            "Disease",
            "--name",
            "乙型病毒性肝炎",
            "--relation",
            "Complication",
            "--relation",
            "Complication",
            "--graph",
            graph.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let reached = String::from_utf8(out.stdout).unwrap();
    assert!(reached.lines().any(|l| l == "门静脉高压"), "{reached}");
}

#[test]
fn align_names_file() {
    let tmp = tempfile::tempdir().unwrap();
    let names = tmp.path().join("names.txt");
    std::fs::write(&names, "原发肝细胞癌\n\n肝细胞癌\n").unwrap();
    let table = tmp.path().join("aligned.tsv");
    let out =
        emrkg(&["align", "--names", names.to_str().unwrap(), "--out", table.to_str().unwrap()], &tmp.path().join("o"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(table).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..3], ["Disease", "原发肝细胞癌", "原发性肝细胞癌"]);
    assert_eq!(rows[1][..3], ["Disease", "肝细胞癌", "-"]);
}
