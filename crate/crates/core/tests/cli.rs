use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::json;
use slotfuse::cli::{run_with, EXIT_CONTRACT, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK};
use slotfuse::encoder::{EncoderModel, Tokenizer};
use slotfuse::selector::SelectorConfig;
use slotfuse::synthetic::synthetic_corpus;
use slotfuse::corpus::save_corpus;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("slotfuse").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn small_dataset(dir: &Path) -> String {
    let path = dir.join("data.json");
    save_corpus(&synthetic_corpus(12, 4).unwrap(), &path).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let output = Command::new(env!("CARGO_BIN_EXE_slotfuse"))
        .args(["train", "--dataset", "/no/such/dataset.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_INPUT));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/no/such/dataset.json"), "{stderr}");
    assert!(stderr.contains("[train]"), "{stderr}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["sweep", "--dataset", &data, "--out", out, "--grid", ""]).code, EXIT_INPUT);
    assert_eq!(run(&["train", "--dataset", &data, "--out", out, "--delta", "1.5"]).code, EXIT_INPUT);
    assert_eq!(run(&["predict", "--dataset", &data, "--out", out, "--ablation", "-XY"]).code, EXIT_INPUT);
    assert_eq!(run(&["frobnicate"]).code, EXIT_INPUT);

    let config = dir.path().join("config.json");
    fs::write(&config, json!({"grid": []}).to_string()).unwrap();
    let r = run(&["sweep", "--config", config.to_str().unwrap(), "--dataset", &data]);
    assert_eq!(r.code, EXIT_INPUT);
    assert!(r.stderr.contains("grid is empty"), "{}", r.stderr);

    fs::write(&config, json!({"epochz": 3}).to_string()).unwrap();
    assert_eq!(run(&["train", "--config", config.to_str().unwrap()]).code, EXIT_INPUT);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("run");
    // the flag overrides the config file
    let config = dir.path().join("config.json");
    fs::write(&config, json!({"epochs": 5, "seed": 3}).to_string()).unwrap();
    let r = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        &data,
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let corpus = slotfuse::load_corpus(&data).unwrap();
    let init_config = SelectorConfig {
        seed: 3,
        ..SelectorConfig::default()
    }
    .encoder_config();
    let init = EncoderModel::init(init_config, Tokenizer::from_corpus(&corpus)).unwrap();
    assert_eq!(read(out.join("model.json")), init.to_checkpoint_json());
    assert_eq!(read(out.join("train_log.csv")).lines().next(), Some("epoch,loss"));
}

#[test]
fn train_sweep_predict_evaluate_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let out = out.to_str().unwrap();
        for cmd in ["train", "sweep", "predict", "evaluate", "ablate"] {
            let r = run(&[cmd, "--dataset", &data, "--out", out, "--epochs", "2"]);
            assert_eq!(r.code, EXIT_OK, "{cmd}: {}", r.stderr);
        }
        let files: Vec<String> = ["model.json", "train_log.csv", "sweep.csv", "predictions.json", "report.csv", "report.txt", "ablation.csv"]
            .iter()
            .map(|f| read(Path::new(out).join(f)))
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let sweep = &outputs[0][2];
    assert_eq!(sweep.lines().count(), 6);
    assert!(sweep.starts_with("delta,precision,recall\n0.9,"));
    assert_eq!(outputs[0][6].lines().next(), Some("ablation,JGA,SA"));
}

#[test]
fn sweep_prints_the_best_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["train", "--dataset", &data, "--out", out, "--epochs", "1"]).code, EXIT_OK);
    let r = run(&["sweep", "--dataset", &data, "--out", out, "--grid", "0.5,0.6,0.7,0.8,0.9"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("best delta: "), "{}", r.stdout);
    let recalls: Vec<f64> = read(dir.path().join("sweep.csv"))
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(recalls.len(), 5);
    // δ ascending, so recall must not increase
    assert!(recalls.windows(2).all(|w| w[1] <= w[0]), "{recalls:?}");
}

#[test]
fn gold_oracle_round_trip_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().to_str().unwrap();
    let r = run(&["predict", "--dataset", &data, "--out", out, "--generator", "gold-oracle"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let r = run(&["evaluate", "--dataset", &data, "--out", out]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout, "JGA,100.0\nSA,100.0\n");
    assert!(read(dir.path().join("report.csv")).contains("\nJGA,100.0\n"));
}

#[test]
fn one_matching_turn_of_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("three.json");
    fs::write(
        &data,
        json!({
            "schema": [{"domain": "taxi", "slot": "departure"}],
            "ontology": {"taxi-departure": ["ely", "london"]},
            "templates": {"prefixes": {"taxi": "The user wants a taxi"}, "phrases": {"taxi-departure": "from <v>"}},
            "dialogues": [{"id": "d", "turns": [
                {"sys": "", "user": "hello", "state": {}},
                {"sys": "yes ?", "user": "from ely", "state": {"taxi-departure": "ely"}},
                {"sys": "ok", "user": "actually from london", "state": {"taxi-departure": "london"}}
            ]}]
        })
        .to_string(),
    )
    .unwrap();
    let dump = dir.path().join("dump.json");
    fs::write(
        &dump,
        json!([
            {"dialogue_id": "d", "turn": 0, "state": {"taxi-departure": "ely"}},
            {"dialogue_id": "d", "turn": 1, "state": {"taxi-departure": "ELY"}},
            {"dialogue_id": "d", "turn": 2, "state": {}}
        ])
        .to_string(),
    )
    .unwrap();
    let r = run(&[
        "evaluate",
        "--dataset",
        data.to_str().unwrap(),
        "--predictions",
        dump.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.starts_with("JGA,33.3\n"), "{}", r.stdout);
}

#[test]
fn dump_with_foreign_slots_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["predict", "--dataset", &data, "--out", out, "--generator", "gold-oracle"]).code, EXIT_OK);
    let path = dir.path().join("predictions.json");
    let mut dump: serde_json::Value = serde_json::from_str(&read(&path)).unwrap();
    dump[0]["state"]["train-day"] = json!("monday");
    fs::write(&path, dump.to_string()).unwrap();
    let r = run(&["evaluate", "--dataset", &data, "--out", out]);
    assert_eq!(r.code, EXIT_CONTRACT);
    assert!(r.stderr.contains("[evaluate]") && r.stderr.contains("train-day"), "{}", r.stderr);
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let config = dir.path().join("config.json");
    fs::write(&config, json!({"learning_rate": 1e300, "epochs": 3}).to_string()).unwrap();
    let r = run(&["train", "--config", config.to_str().unwrap(), "--dataset", &data, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(r.code, EXIT_NUMERIC, "{}", r.stderr);
    assert!(r.stderr.contains("non-finite loss"), "{}", r.stderr);
}
