use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_segcross"));
    c.env_remove("SEGCROSS_EMBED_URL").env_remove("SEGCROSS_COMPLETE_URL").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
  "epochs": 2,
  "preprocess": {"max_sentence_tokens": 8, "max_segment_tokens": 48, "max_segments": 4},
  "encoder": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16, "max_positions": 64}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Synthetic corpus plus a checkpoint trained on it.
    fn trained(&self) -> (PathBuf, PathBuf) {
        let data = self.path("corpus.jsonl");
        let cfg = self.path("config.json");
        let model = self.path("model.ckpt");
        fs::write(&cfg, TINY_CONFIG).unwrap();
        ok(&["synth", "--topics", "2", "--docs", "6", "--seed", "3", "--out", p(&data)]);
        ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&model), "--seed", "1"]);
        (data, model)
    }
}

#[test]
fn synth_is_deterministic() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.jsonl"), f.path("b.jsonl"));
    ok(&["synth", "--topics", "2", "--docs", "4", "--seed", "7", "--out", p(&a)]);
    ok(&["synth", "--topics", "2", "--docs", "4", "--seed", "7", "--out", p(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["sentences"].as_array().unwrap().len(), v["labels"].as_array().unwrap().len());
    }
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(run(&["synth", "--docs", "2", "--out", "x", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_user_error() {
    let out = run(&["eval", "--data", "/nonexistent/data.jsonl", "--model", "/nonexistent/m.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_eval_segment_round_trip() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let log = fs::read_to_string(format!("{}.loss.csv", model.display())).unwrap();
    assert!(log.starts_with("epoch,mean_loss,documents,skipped\n"));
    assert_eq!(log.lines().count(), 4);

    let line = ok(&["eval", "--data", p(&data), "--model", p(&model)]);
    let re = regex_lite(&line);
    assert!(re, "unexpected eval output {line:?}");
    ok(&["eval", "--data", p(&data), "--model", p(&model), "--include-final-boundary", "--jobs", "2"]);
    let on = ok(&["eval", "--data", p(&data), "--model", p(&model), "--csfm", "true"]);
    let off = ok(&["eval", "--data", p(&data), "--model", p(&model), "--csfm", "false"]);
    assert!(regex_lite(&on) && regex_lite(&off));

    let text = f.path("doc.txt");
    fs::write(&text, "first line here\nsecond line\n\nthird line after blank\n").unwrap();
    let out = ok(&["segment", "--model", p(&model), "--input", p(&text), "--separator", "newline"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["id"], "doc");
    assert_eq!(v["labels"].as_array().unwrap().len(), 3);
    let spans = v["paragraph_spans"].as_array().unwrap();
    assert_eq!(spans.first().unwrap()[0], 0);
    assert_eq!(spans.last().unwrap()[1], 2);

    let jsonl_out = f.path("seg.jsonl");
    ok(&["segment", "--model", p(&model), "--input", p(&data), "--out", p(&jsonl_out)]);
    assert_eq!(fs::read_to_string(&jsonl_out).unwrap().lines().count(), 6);
}

/// `precision=x, recall=y, f1=z` with numeric fields.
fn regex_lite(line: &str) -> bool {
    let parts: Vec<&str> = line.trim().split(", ").collect();
    parts.len() == 3
        && ["precision=", "recall=", "f1="]
            .iter()
            .zip(&parts)
            .all(|(k, p)| p.strip_prefix(k).is_some_and(|v| v.parse::<f64>().is_ok()))
}

#[test]
fn training_is_reproducible() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let again = f.path("again.ckpt");
    ok(&["train", "--data", p(&data), "--config", p(&f.path("config.json")), "--out", p(&again), "--seed", "1"]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn chunk_index_query_pipeline() {
    let f = Fixture::new();
    let (_, model) = f.trained();
    let text: String = (0..12).map(|i| format!("Sentence {i} talks about t0w{i} things. ")).collect();
    let doc = f.path("long.txt");
    fs::write(&doc, &text).unwrap();
    let chunks = f.path("chunks.jsonl");
    ok(&["chunk", "--model", p(&model), "--input", p(&doc), "--max-chunk-chars", "120", "--max-depth", "3", "--out", p(&chunks)]);
    let lines = fs::read_to_string(&chunks).unwrap();
    let parsed: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(parsed.len() > 1);
    let joined: String = parsed.iter().map(|c| c["text"].as_str().unwrap()).collect();
    assert_eq!(joined, text);

    let index = f.path("chunks.idx");
    ok(&["index", "--chunks", p(&chunks), "--embedder", "hashed", "--dim", "64", "--out", p(&index), "--jobs", "2"]);
    let q1 = ok(&["query", "--index", p(&index), "--question", "what about t0w3", "--top-k", "2"]);
    let q2 = ok(&["query", "--index", p(&index), "--question", "what about t0w3", "--top-k", "2"]);
    assert_eq!(q1, q2);
    let v: serde_json::Value = serde_json::from_str(&q1).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    assert!(v["prompt"].as_str().unwrap().contains("what about t0w3"));
    assert!(v.get("answer").is_none());

    let templ = ok(&["query", "--index", p(&index), "--question", "q", "--top-k", "1", "--template", "C:{context} Q:{question}"]);
    let v: serde_json::Value = serde_json::from_str(&templ).unwrap();
    assert!(v["prompt"].as_str().unwrap().starts_with("C:") && v["prompt"].as_str().unwrap().ends_with(" Q:q"));

    let bad = run(&["query", "--index", p(&index), "--question", "q", "--template", "no placeholders"]);
    assert_eq!(bad.status.code(), Some(1));
    let bad = run(&["index", "--chunks", p(&chunks), "--embedder", "external", "--out", p(&f.path("x.idx"))]);
    assert_eq!(bad.status.code(), Some(1));
}

/// Serves one request with an echo of the prompt.
fn echo_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let resp = serde_json::json!({ "text": req["prompt"] }).to_string();
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}", resp.len())
            .unwrap();
    });
    url
}

#[test]
fn query_with_completion_endpoint() {
    let f = Fixture::new();
    let chunks = f.path("c.jsonl");
    fs::write(
        &chunks,
        "{\"text\":\"alpha beta\",\"sentence_span\":[0,0],\"char_len\":10,\"depth\":0}\n{\"text\":\"gamma\",\"sentence_span\":[1,1],\"char_len\":5,\"depth\":0}\n",
    )
    .unwrap();
    let index = f.path("c.idx");
    ok(&["index", "--chunks", p(&chunks), "--embedder", "hashed", "--dim", "32", "--out", p(&index)]);
    let url = echo_server();
    let out = bin()
        .args(["query", "--index", p(&index), "--question", "alpha?", "--top-k", "1"])
        .env("SEGCROSS_COMPLETE_URL", &url)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["answer"], v["prompt"]);
}

#[test]
fn sweep_writes_csv() {
    let f = Fixture::new();
    let (data, model) = f.trained();
    let csv = f.path("sweep.csv");
    let out = ok(&["sweep", "--data", p(&data), "--model", p(&model), "--max-len", "10,24,48,64", "--out", p(&csv)]);
    assert_eq!(out.lines().count(), 4);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "max_len,mode,tp,fp,fn,precision,recall,f1,note");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("10,reeval,,") && lines[1].contains("skipped"));
    assert!(lines.iter().all(|l| l.split(',').count() == 9));

    let retrain = run(&["sweep", "--data", p(&data), "--model", p(&model), "--max-len", "24", "--out", p(&csv), "--mode", "retrain"]);
    assert_eq!(retrain.status.code(), Some(1));
}

#[test]
fn convert_wiki727k_directory() {
    let f = Fixture::new();
    let dir = f.path("wiki");
    fs::create_dir_all(dir.join("sub")).unwrap();
    fs::write(
        dir.join("sub/a.txt"),
        "========,1,preface.\nFirst sentence.\nSecond sentence.\n========,2,History.\nThird sentence.\n",
    )
    .unwrap();
    fs::write(dir.join("empty.txt"), "========,1,preface.\n").unwrap();
    let out = f.path("wiki.jsonl");
    ok(&["convert", "--format", "wiki727k", "--input", p(&dir), "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["labels"], serde_json::json!([0, 1, 1]));
    assert_eq!(run(&["convert", "--format", "other", "--input", p(&dir), "--out", p(&out)]).status.code(), Some(1));
}
