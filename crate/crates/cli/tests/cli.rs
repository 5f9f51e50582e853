use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[engine]
epsilon = 11.0
epsilon_init = 6.6
n = 3
[synthetic]
videos = 6
frames_per_video = 80
[synthetic.world]
dim = 32
anomaly_length = [10, 30]
"#;

fn vadgate(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_vadgate"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = vadgate(d, &["run", "--config", "small.toml", "--out", out]);
        assert!(o.status.success());
        let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(printed, json(&d.join(out).join("metrics.json")));
    }
    for f in [
        "timeline.jsonl",
        "replay.log",
        "scores.csv",
        "metrics.json",
        "prompts/epoch_0.txt",
    ] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = json(&d.join("a/metrics.json"));
    assert_eq!(metrics["frames_total"], 480);
    assert_eq!(metrics["reasoner_calls"], 2);
    let echoed = std::fs::read_to_string(d.join("a/spec.toml")).unwrap();
    assert!(echoed.contains("seed = 3"));
    assert!(echoed.contains("out = \"a\""));

    // The echoed spec reproduces the run.
    let o = vadgate(d, &["run", "--config", "a/spec.toml", "--out", "c"]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(d.join("a/timeline.jsonl")).unwrap(),
        std::fs::read(d.join("c/timeline.jsonl")).unwrap()
    );

    let o = vadgate(d, &["run", "--config", "small.toml", "--out", "s", "--seed", "4"]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(d.join("a/timeline.jsonl")).unwrap(),
        std::fs::read(d.join("s/timeline.jsonl")).unwrap()
    );
}

#[test]
fn dry_run_prints_the_resolved_spec() {
    let dir = setup();
    let o = vadgate(
        dir.path(),
        &["run", "--config", "small.toml", "--seed", "11", "--dry-run"],
    );
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(v["seed"].as_integer(), Some(11));
    assert_eq!(v["engine"]["seed"].as_integer(), Some(11));
    assert_eq!(v["engine"]["n"].as_integer(), Some(3));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn usage_problems_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("missing.toml"),
        "[paths]\nmanifest = \"nowhere/manifest.json\"\n",
    )
    .unwrap();
    let o = vadgate(d, &["run", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    std::fs::write(d.join("typo.toml"), "[engine]\nepsilonn = 1.0\n").unwrap();
    assert_eq!(vadgate(d, &["run", "--config", "typo.toml"]).status.code(), Some(2));
    assert_eq!(vadgate(d, &["run", "--config", "absent.toml"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[engine]\nl = 7\n").unwrap();
    assert_eq!(vadgate(d, &["run", "--config", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn eval_recomputes_and_follows_edits() {
    let dir = setup();
    let d = dir.path();
    assert!(vadgate(d, &["run", "--config", "small.toml", "--out", "r"])
        .status
        .success());
    let stored = json(&d.join("r/metrics.json"));
    let o = vadgate(
        d,
        &[
            "eval",
            "--timeline",
            "r/timeline.jsonl",
            "--annotations",
            "r/annotations.json",
            "--out",
            "e",
        ],
    );
    assert!(o.status.success());
    assert_eq!(json(&d.join("e/metrics.json")), stored);

    // Raise the score of one normal frame to the top.
    let annotations = json(&d.join("r/annotations.json"));
    let text = std::fs::read_to_string(d.join("r/timeline.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let victim = lines
        .iter()
        .position(|e| {
            let spans = annotations[e["video"].as_str().unwrap()].as_array().unwrap();
            let f = e["frame"].as_u64().unwrap();
            !spans
                .iter()
                .any(|s| s[0].as_u64().unwrap() <= f && f <= s[1].as_u64().unwrap())
        })
        .unwrap();
    lines[victim]["score"] = serde_json::json!(1.0);
    let edited: String = lines.iter().map(|l| l.to_string() + "\n").collect();
    std::fs::write(d.join("edited.jsonl"), edited).unwrap();
    let o = vadgate(
        d,
        &[
            "eval",
            "--timeline",
            "edited.jsonl",
            "--annotations",
            "r/annotations.json",
            "--out",
            "x",
        ],
    );
    assert!(o.status.success());
    assert!(json(&d.join("x/metrics.json"))["auc"].as_f64().unwrap() < stored["auc"].as_f64().unwrap());

    // Video ids the annotations do not know.
    std::fs::write(d.join("other.json"), r#"{"elsewhere": []}"#).unwrap();
    let o = vadgate(
        d,
        &[
            "eval",
            "--timeline",
            "r/timeline.jsonl",
            "--annotations",
            "other.json",
            "--out",
            "y",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alignment"));
}

#[test]
fn sweep_writes_one_row_per_distinct_point() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("grid.toml"), "epsilon = [9.0, 11.0, 13.0, 11.0]\n").unwrap();
    let o = vadgate(
        d,
        &[
            "sweep",
            "--config",
            "small.toml",
            "--grid",
            "grid.toml",
            "--out",
            "sw",
            "--jobs",
            "2",
        ],
    );
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("epsilon,auc,ap,frames_conscious"));
    assert!(rows[1].starts_with("9.0,") && rows[3].starts_with("13.0,"));
    assert!(d.join("sw/grid.toml").exists() && d.join("sw/spec.toml").exists());

    std::fs::write(d.join("bad_grid.toml"), "radius = [1.0]\n").unwrap();
    let o = vadgate(d, &["sweep", "--config", "small.toml", "--grid", "bad_grid.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_datasets_replay_like_in_memory_runs() {
    let dir = setup();
    let d = dir.path();
    assert!(vadgate(d, &["gen", "--config", "small.toml", "--out", "data"])
        .status
        .success());
    assert_eq!(std::fs::read_dir(d.join("data/embeddings")).unwrap().count(), 6);
    let spec = format!("{SMALL}\n[paths]\nmanifest = \"data/manifest.json\"\n");
    std::fs::write(d.join("from_disk.toml"), spec).unwrap();
    let disk = vadgate(d, &["run", "--config", "from_disk.toml", "--out", "disk"]);
    let memory = vadgate(d, &["run", "--config", "small.toml", "--out", "mem"]);
    assert!(disk.status.success() && memory.status.success());
    assert_eq!(disk.stdout, memory.stdout);
    assert_eq!(
        std::fs::read(d.join("disk/timeline.jsonl")).unwrap(),
        std::fs::read(d.join("mem/timeline.jsonl")).unwrap()
    );
}

/// Answers every connection: `/embed` with a deterministic vector per text,
/// chat completions with a fixed frame description.
fn mock_endpoints(dim: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut reader = BufReader::new(stream.unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some(v) = h.to_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let reply = if line.contains("/embed") {
                let vectors: Vec<Vec<f64>> = request["texts"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| {
                        let h = t
                            .as_str()
                            .unwrap()
                            .bytes()
                            .fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
                        (0..dim).map(|i| ((h >> (i % 60)) & 7) as f64 + 0.5).collect()
                    })
                    .collect();
                serde_json::json!({ "vectors": vectors })
            } else {
                let text = "Summary: people walk past.\nTotal degree of violation: 0.2";
                serde_json::json!({ "choices": [{ "message": { "content": text } }] })
            }
            .to_string();
            let head = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                reply.len()
            );
            let stream = reader.get_mut();
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    url
}

fn live_command(d: &Path, chat: Option<&str>) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vadgate"));
    cmd.current_dir(d);
    for role in ["VLM_", "LLM_", ""] {
        for name in ["API_BASE_URL", "MODEL_NAME", "API_KEY"] {
            cmd.env_remove(format!("{role}{name}"));
        }
    }
    if let Some(url) = chat {
        cmd.env("API_BASE_URL", format!("{url}/v1")).env("MODEL_NAME", "mock");
    }
    cmd
}

#[test]
fn live_mode_talks_to_the_configured_endpoints() {
    let dir = setup();
    let d = dir.path();
    assert!(vadgate(
        d,
        &[
            "gen",
            "--config",
            "small.toml",
            "--out",
            "data",
            "--videos",
            "2",
            "--frames",
            "20"
        ]
    )
    .status
    .success());
    // Live analyzers need frame images.
    let mut manifest = json(&d.join("data/manifest.json"));
    for v in manifest["videos"].as_array_mut().unwrap() {
        let images = format!("frames/{}", v["id"].as_str().unwrap());
        std::fs::create_dir_all(d.join("data").join(&images)).unwrap();
        for i in 0..20 {
            std::fs::write(
                d.join("data").join(&images).join(format!("{i:06}.jpg")),
                [0xff, 0xd8, 0xff],
            )
            .unwrap();
        }
        v["image_dir"] = serde_json::json!(images);
    }
    std::fs::write(d.join("data/manifest.json"), manifest.to_string()).unwrap();

    let url = mock_endpoints(32);
    let spec = format!(
        "provider = \"live\"\n[paths]\nmanifest = \"data/manifest.json\"\nout = \"live\"\n[engine]\nn = 100\n[live]\nembed_url = \"{url}\"\ndim = 32\nmax_attempts = 1\n"
    );
    std::fs::write(d.join("live.toml"), spec).unwrap();

    let o = live_command(d, None)
        .args(["run", "--config", "live.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("API_BASE_URL"));

    let o = live_command(d, Some(&url))
        .args(["run", "--config", "live.toml"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = json(&d.join("live/stats.json"));
    assert_eq!(stats["frames_total"], 40);
    assert_eq!(stats["analyzer_fallbacks"], 0);
    let timeline = std::fs::read_to_string(d.join("live/timeline.jsonl")).unwrap();
    let scores: Vec<f64> = timeline
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["score"]
                .as_f64()
                .unwrap()
        })
        .collect();
    assert_eq!(scores.len(), 40);
    assert!(scores.iter().all(|s| (s - 0.2).abs() < 1e-12), "{scores:?}");
}

#[test]
fn shipped_demo_config_runs_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_demo.toml");
    let start = std::time::Instant::now();
    let o = vadgate(
        dir.path(),
        &["run", "--config", config.to_str().unwrap(), "--out", "demo"],
    );
    let elapsed = start.elapsed();
    assert!(o.status.success());
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");
    let metrics = json(&dir.path().join("demo/metrics.json"));
    assert_eq!(metrics["frames_total"], 12000);
    assert_eq!(metrics["reasoner_calls"], 4);
    let rate = metrics["compression_rate"].as_f64().unwrap();
    assert!((0.15..=0.30).contains(&rate), "{rate}");

    // Same run as the built-in demo.
    let builtin = vadgate(dir.path(), &["run", "--out", "builtin"]);
    assert!(builtin.status.success());
    assert_eq!(builtin.stdout, o.stdout);
}
