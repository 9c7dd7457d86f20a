use std::path::Path;
use std::process::{Command, Output};

fn dsfnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsfnet"))
        .args(args)
        .current_dir(cwd)
        .env("DSFNET_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_then_train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.cfg"), "groups = 400\nseed = 5\n").unwrap();
    std::fs::write(
        d.join("run.cfg"),
        "total_steps = 60\nbatch_size = 32\nlog_every = 10\nhidden = 8,4\ncheckpoint_every = 25\n",
    )
    .unwrap();
    let o = dsfnet(&["gen-data", "--config", "gen.cfg", "--out", "data.csv"], d);
    assert!(o.status.success(), "{o:?}");
    for run in ["a", "b"] {
        let o = dsfnet(&["train", "--config", "run.cfg", "--data", "data.csv", "--out", run], d);
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["checkpoint.json", "trace.csv", "checkpoint_0000025.json", "checkpoint_0000050.json"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let trace = std::fs::read_to_string(d.join("a/trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,lbce,lncr,lcnc,lr"));
    assert_eq!(trace.lines().count(), 1 + 7);

    // A different seed changes the model.
    let o = dsfnet(&["train", "--config", "run.cfg", "--data", "data.csv", "--out", "c", "--seed", "6"], d);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(d.join("a/checkpoint.json")).unwrap(),
        std::fs::read(d.join("c/checkpoint.json")).unwrap()
    );
}

#[test]
fn verify_lemma_reports_small_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsfnet(&["verify", "--suite", "lemma", "--n", "7", "--d", "8"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("ncr_descent_n7_d8")).expect("descent line");
    assert!(line.starts_with("PASS"));
    let value: f64 = line.split("value=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(value < 1e-2);
    assert!(text.contains("frame_n7_d6"));
}

#[test]
fn verify_laws_and_gradcheck_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsfnet(&["verify", "--suite", "laws"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("PASS mma_norm_cv"));
    let o = dsfnet(&["gradcheck", "--seed", "3", "--out", "report.txt"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    assert!(report.lines().all(|l| l.starts_with("PASS")));
    assert!(report.contains("gradcheck_total_loss"));
}

fn separable_csv(rows: usize) -> String {
    let mut out = String::from("group_id,label,scenario_id,s_0,s_1,x_0,x_1,x_2\n");
    for i in 0..rows {
        // Low-discrepancy points so the set is deterministic and balanced.
        let a = ((i as f64 * 0.618_033_988_75) % 1.0) * 2.0 - 1.0;
        let b = ((i as f64 * 0.414_213_562_37) % 1.0) * 2.0 - 1.0;
        let c = ((i as f64 * 0.732_050_807_57) % 1.0) * 2.0 - 1.0;
        let label = u8::from(a + 0.5 * b > 0.0);
        let scenario = i % 3;
        out.push_str(&format!(
            "{},{label},{scenario},{},{},{a},{b},{c}\n",
            i / 4,
            scenario as f64 - 1.0,
            if scenario == 0 { 1.0 } else { -1.0 }
        ));
    }
    out
}

#[test]
fn eval_on_separable_set_exceeds_099() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("train.csv"), separable_csv(2000)).unwrap();
    std::fs::write(
        d.join("run.cfg"),
        "total_steps = 1500\nbatch_size = 64\nbase_lr = 0.01\nfactors = 2\nhidden = 8,4\n",
    )
    .unwrap();
    let o = dsfnet(&["train", "--config", "run.cfg", "--data", "train.csv", "--out", "m"], d);
    assert!(o.status.success(), "{o:?}");
    let o = dsfnet(&["eval", "--checkpoint", "m/checkpoint.json", "--data", "train.csv"], d);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let auc: f64 = text
        .lines()
        .find(|l| l.starts_with("auc "))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(auc > 0.99, "{text}");

    let o = dsfnet(
        &["interpret", "--checkpoint", "m/checkpoint.json", "--data", "train.csv", "--config", "run.cfg"],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("fsl0"));
}

#[test]
fn usage_and_runtime_failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(dsfnet(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(dsfnet(&[], d).status.code(), Some(1));
    std::fs::write(d.join("bad.cfg"), "seed = 1\nlearnin_rate = 0.1\n").unwrap();
    let o = dsfnet(&["gen-data", "--config", "bad.cfg", "--out", "x.csv"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    std::fs::write(d.join("bad.cfg"), "batch_size = 1\n").unwrap();
    assert_eq!(dsfnet(&["gen-data", "--config", "bad.cfg", "--out", "x.csv"], d).status.code(), Some(1));
    assert_eq!(dsfnet(&["train", "--variant", "bogus"], d).status.code(), Some(1));
    assert_eq!(dsfnet(&["gen-data"], d).status.code(), Some(1));
    assert_eq!(dsfnet(&["verify", "--n", "9", "--d", "4"], d).status.code(), Some(1));
    assert_eq!(
        dsfnet(&["eval", "--checkpoint", "missing.json", "--data", "missing.csv"], d).status.code(),
        Some(2)
    );
    std::fs::write(d.join("broken.csv"), "group_id,label,scenario_id,s_0,x_0\n0,2,0,1.0,1.0\n").unwrap();
    let o = dsfnet(&["train", "--data", "broken.csv"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn effective_config_is_printed_unless_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dsfnet"))
        .args(["verify", "--suite", "laws", "--seed", "4", "--variant", "ncr"])
        .current_dir(dir.path())
        .env("DSFNET_LOG", "info")
        .output()
        .unwrap();
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed = 4") && err.contains("variant = ncr"), "{err}");
    let o = Command::new(env!("CARGO_BIN_EXE_dsfnet"))
        .args(["verify", "--suite", "laws"])
        .current_dir(dir.path())
        .env("DSFNET_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
