use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

fn collect(root: &Path, dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, into);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel != "manifest.json" {
                into.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
}

fn run(mode: &str, extra: &[&str], out: &Path) -> BTreeMap<String, Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_memsfbp"))
        .args([mode, "--nx", "32", "--nz", "16", "--dt", "1e-3", "--out"])
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let mut files = BTreeMap::new();
    collect(out, out, &mut files);
    files
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 3] = [
        ("evolve", &["--t-end", "0.05", "--set", "params.init=\"tilted\"", "--set", "time.record_every=10"]),
        ("sweep", &["--t-end", "0.1", "--set", "params.lambda_values=[0.1, 0.2, 0.4]"]),
        ("branch", &["--set", "params.model=\"sar\""]),
    ];
    for (mode, extra) in cases {
        let a = run(mode, extra, &dir.path().join(format!("{mode}_a")));
        let b = run(mode, extra, &dir.path().join(format!("{mode}_b")));
        let c = run(mode, &[extra, &["--sequential"][..]].concat(), &dir.path().join(format!("{mode}_c")));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{mode}: repeated run differs");
        assert_eq!(a, c, "{mode}: sequential run differs");
    }
}
