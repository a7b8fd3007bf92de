use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use helios::format::{parse_cache, parse_inputs, parse_profile, parse_workflow, workflow_to_json, FormatError};
use helios_core::ir::OpArgs;
use helios_core::{NodeId, OpKind, Vocab};

const REVISE: &str = r#"{"nodes":[
 {"id":0,"kind":"input","args":{"name":"q"}},
 {"id":1,"kind":"llm","args":{"messages":[{"role":"user","parts":[{"ref":0}]}]}},
 {"id":2,"kind":"format","args":{"template":[{"text":"Revise answer to question"},{"ref":0},{"text":"with answer"},{"ref":1}]}},
 {"id":3,"kind":"llm","args":{"messages":[{"role":"user","parts":[{"ref":2}]}]}},
 {"id":4,"kind":"output","args":{}}],
 "edges":[{"from":3,"to":4,"slot":0}],
 "outputs":[4]}"#;

fn helios(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helios")).args(args).env_remove("HELIOS_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = helios(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn revise_answer_workflow_parses_with_implicit_edges() {
    let mut vocab = Vocab::new();
    let g = parse_workflow(REVISE, &mut vocab).unwrap();
    assert_eq!(g.node_ids().count(), 5);
    assert_eq!(g.nodes().map(|n| n.inputs.len()).sum::<usize>(), 5);
    assert_eq!(g.node(NodeId(2)).unwrap().inputs, vec![NodeId(0), NodeId(1)]);
    assert_eq!(g.node(NodeId(3)).unwrap().kind(), OpKind::Llm);
    let OpArgs::Llm { deterministic, .. } = &g.node(NodeId(1)).unwrap().args else { panic!("llm") };
    assert!(*deterministic);
    // Rendering and parsing again gives the same graph.
    let again = parse_workflow(&workflow_to_json(&g, &vocab), &mut vocab).unwrap();
    assert_eq!(again, g);
}

#[test]
fn malformed_workflows_are_named() {
    let mut v = Vocab::new();
    let dangling = REVISE.replace(r#"{"from":3,"to":4,"slot":0}"#, r#"{"from":9,"to":4,"slot":0}"#);
    assert!(matches!(parse_workflow(&dangling, &mut v), Err(FormatError::DanglingEdge { .. })));
    let kind = REVISE.replace(r#""kind":"format""#, r#""kind":"shell""#);
    assert!(matches!(parse_workflow(&kind, &mut v), Err(FormatError::UnknownKind(_))));
    let sparse = REVISE.replace(r#""slot":0}"#, r#""slot":1}"#);
    assert!(matches!(parse_workflow(&sparse, &mut v), Err(FormatError::SparseSlots { .. })));
    let no_outputs = REVISE.replace(r#""outputs":[4]"#, r#""outputs":[]"#);
    let err = parse_workflow(&no_outputs, &mut v).unwrap_err();
    assert!(err.to_string().contains("output"), "{err}");
    assert!(matches!(parse_workflow("{", &mut v), Err(FormatError::Json(_))));
    let missing = REVISE.replace(r#"{"name":"q"}"#, "{}");
    assert!(matches!(parse_workflow(&missing, &mut v), Err(FormatError::Args { .. })));
}

#[test]
fn inputs_profiles_and_caches_parse() {
    let mut v = Vocab::new();
    let inputs = parse_inputs(r#"{"q":["a b c", {"token_count": 4}, {"token_count": 4, "salt": 9}]}"#, &mut v).unwrap();
    let q = &inputs["q"];
    assert_eq!(q.iter().map(Vec::len).collect::<Vec<_>>(), [3, 4, 4]);
    assert_ne!(q[1], q[2]);
    let p = parse_profile(r#"{"1":{"len_out":5},"3":{"len_out":7.5}}"#).unwrap();
    assert_eq!(p.len_out(NodeId(3)), 7.5);
    assert!(parse_cache(r#"{"xyz":[1]}"#, 8).is_err());
    assert!(parse_cache("{}", 8).is_ok());
}

#[test]
fn run_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let wf = write(d, "wf.json", REVISE);
    let inputs = write(d, "in.json", r#"{"q":["How many inches is 1 meter?","What is 2 + 2?"]}"#);
    let profile = write(d, "p.json", r#"{"1":{"len_out":5},"3":{"len_out":7}}"#);
    let out = d.join("out");
    let stdout = ok(&["run", "--workflow", &wf, "--inputs", &inputs, "--profile", &profile, "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("4 calls"), "{stdout}");
    let names: Vec<String> = files(&out).into_iter().map(|(n, _)| n).collect();
    for f in ["schedule.json", "metrics.json", "workers.json", "cost.json", "trace.csv", "latency.csv", "outputs.json", "trt.txt", "trt.dot", "cache.json"] {
        assert!(names.contains(&f.to_string()), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["calls"], 4);
    assert_eq!(metrics["llm_ops"], 2);

    // The stored cache answers every call of a rerun.
    let warm = d.join("warm");
    ok(&[
        "run", "--workflow", &wf, "--inputs", &inputs, "--profile", &profile,
        "--cache", out.join("cache.json").to_str().unwrap(), "--out", warm.to_str().unwrap(),
    ]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(warm.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["llm_ops"], 0);
    assert_eq!(fs::read(out.join("outputs.json")).unwrap(), fs::read(warm.join("outputs.json")).unwrap());

    let csv = d.join("csv");
    ok(&["run", "--workflow", &wf, "--inputs", &inputs, "--profile", &profile, "--format", "csv", "--scheduler", "lspf", "--out", csv.to_str().unwrap()]);
    let text = fs::read_to_string(csv.join("metrics.csv")).unwrap();
    assert!(text.lines().any(|l| l == "method,lspf"), "{text}");
}

#[test]
fn missing_profile_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let wf = write(d, "wf.json", REVISE);
    let inputs = write(d, "in.json", r#"{"q":["x"]}"#);
    let out = helios(&["run", "--workflow", &wf, "--inputs", &inputs, "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim(), "error: profile required");
    let bad = helios(&["run", "--workflow", &wf, "--inputs", &inputs, "--profile", &wf, "--scheduler", "fifo", "--out", "o"]);
    assert!(!bad.status.success());
}

#[test]
fn generated_workloads_run_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = d.join("gen");
    ok(&["gen", "--pattern", "debate", "--batch", "3", "--seed", "5", "--out", gen.to_str().unwrap()]);
    let path = |n: &str| gen.join(n).to_str().unwrap().to_string();
    let mut runs = vec![];
    for (i, seed) in ["1", "1", "2"].iter().enumerate() {
        let out = d.join(format!("run{i}"));
        ok(&[
            "run", "--workflow", &path("workflow.json"), "--inputs", &path("inputs.json"), "--profile", &path("profile.json"),
            "--workers", "2", "--scheduler", "random", "--seed", seed, "--out", out.to_str().unwrap(),
        ]);
        runs.push(files(&out));
    }
    assert_eq!(runs[0], runs[1]);
    // Outputs do not depend on the schedule.
    let outputs = |r: &Vec<(String, Vec<u8>)>| r.iter().find(|(n, _)| n == "outputs.json").unwrap().1.clone();
    assert_eq!(outputs(&runs[0]), outputs(&runs[2]));

    // The environment seed is the fallback.
    let a = d.join("env");
    let status = Command::new(env!("CARGO_BIN_EXE_helios"))
        .args(["gen", "--pattern", "debate", "--batch", "3", "--out", a.to_str().unwrap()])
        .env("HELIOS_SEED", "5")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(files(&a), files(&gen));
}

#[test]
fn ablate_and_gap_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = d.join("gen");
    ok(&["gen", "--pattern", "mapred", "--batch", "2", "--shape", "64,64,8,8", "--out", gen.to_str().unwrap()]);
    let path = |n: &str| gen.join(n).to_str().unwrap().to_string();
    let abl = d.join("abl");
    let stdout = ok(&[
        "ablate", "--workflow", &path("workflow.json"), "--inputs", &path("inputs.json"), "--profile", &path("profile.json"),
        "--warmup-inputs", &path("inputs.json"), "--out", abl.to_str().unwrap(), "--format", "csv",
    ]);
    assert_eq!(stdout.lines().count(), 6);
    let table = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    let gap = d.join("gap");
    ok(&["gap", "--only", "mapred-mmlu", "--seeds", "0", "--out", gap.to_str().unwrap()]);
    let rows = fs::read_to_string(gap.join("gap.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5);
    let bad = helios(&["gap", "--only", "nope", "--out", gap.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown suite configuration"));
    let tight = helios(&["gap", "--only", "mapred-tatqa", "--seeds", "0", "--limit", "2", "--out", gap.to_str().unwrap()]);
    assert!(!tight.status.success());
}
