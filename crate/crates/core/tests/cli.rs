use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str =
    "rssi,tx_power,distance_ft,carriage_user1,carriage_user2,pose_user1,pose_user2\n";

fn tcftl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcftl"))
        .args(args)
        .args(["--output", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, format!("{HEADER}{body}")).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_valid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "m.csv",
        "-60,12,3,standing_hand,standing_hand,0,0\n-70,12,9,standing_hand,standing_hand,45,0\n",
    );
    let out = dir.path().join("out");
    let o = tcftl(&["ingest", "--dataset", &csv], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("2 rows read, 2 accepted, 0 censored, 0 error(s)"));
    let data = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 3);
    let meta = std::fs::read_to_string(out.join("dataset.meta.json")).unwrap();
    assert!(meta.contains(env!("CARGO_PKG_VERSION")));
    assert!(meta.contains("\"reference_tx\": 12"));
}

#[test]
fn bad_row_is_reported_and_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "m.csv",
        "-60,12,3,standing_hand,standing_hand,0,0\n-61,12,3,standing_hand,standing_hand,30,0\n-62,12,3,standing_hand,standing_hand,90,0\n",
    );
    let out = dir.path().join("out");
    let o = tcftl(&["ingest", "--dataset", &csv], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("m.csv:3:"), "{}", stderr(&o));
    let data = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 3);

    let o = tcftl(
        &["ingest", "--dataset", &csv, "--strict"],
        &dir.path().join("strict"),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("m.csv:3:"));
}

#[test]
fn reference_tx_shifts_rssi() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "m.csv",
        "-60,0,3,standing_hand,standing_hand,0,0\n",
    );
    let out = dir.path().join("out");
    let o = tcftl(&["ingest", "--dataset", &csv, "--reference-tx", "12"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    let row = data.lines().nth(1).unwrap();
    assert!(row.starts_with("-48,12,"), "{row}");
}

#[test]
fn one_of_n_det_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = tcftl(
        &["det", "--synthetic", "1", "--mode", "one-of-n", "--n", "6"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("det_one-of-n_n6_uniform.csv")).unwrap();
    assert!(csv.starts_with("p_fa,p_d,tau,m,n,offsets\n"));
    for row in csv.lines().skip(1) {
        assert_eq!(row.split(',').nth(3), Some("1"));
    }
    let svg = std::fs::read_to_string(dir.path().join("det_one-of-n_n6_uniform.svg")).unwrap();
    assert!(svg.contains("coin flip"));
    assert!(dir
        .path()
        .join("det_one-of-n_n6_uniform.meta.json")
        .is_file());
}

#[test]
fn cognitive_sweep_reports_each_look_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = tcftl(
        &[
            "sweep",
            "--synthetic",
            "1",
            "--mode",
            "cognitive",
            "--fdr-target",
            "0.5",
            "--looks",
            "6x1,6x4",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv =
        std::fs::read_to_string(dir.path().join("sweep_cognitive_fdr50_uniform.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "scans,samples_per_scan,looks,p_d,status");
    assert!(rows[1].starts_with("6,1,6,"));
    assert!(rows[2].starts_with("6,4,24,"));
}

#[test]
fn unreachable_fdr_target_is_a_warning_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = tcftl(
        &[
            "fdr",
            "--synthetic",
            "1",
            "--mode",
            "one-of-n",
            "--n",
            "1",
            "--fdr-target",
            "0.000001",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv =
        std::fs::read_to_string(dir.path().join("fdr_one-of-n_n1_uniform_target.csv")).unwrap();
    assert!(
        csv.lines().nth(1).unwrap().ends_with(",,infeasible"),
        "{csv}"
    );
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = tcftl(&["det", "--dataset", "/nonexistent.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = tcftl(&["det", "--synthetic", "1", "--boundary", "40"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = tcftl(&["det", "--synthetic", "1", "--mode", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_then_reuse_bank() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = tcftl(&["estimate", "--synthetic", "2"], &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let bank = a.join("bank.json");
    let from_bank = dir.path().join("b");
    let from_data = dir.path().join("c");
    assert!(tcftl(
        &["det", "--bank", bank.to_str().unwrap(), "--n", "6"],
        &from_bank
    )
    .status
    .success());
    assert!(tcftl(&["det", "--synthetic", "2", "--n", "6"], &from_data)
        .status
        .success());
    let name = "det_m-of-n_n6_uniform.csv";
    assert_eq!(
        std::fs::read(from_bank.join(name)).unwrap(),
        std::fs::read(from_data.join(name)).unwrap()
    );
}
