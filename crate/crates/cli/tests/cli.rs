use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonlin::parse;
use tempfile::TempDir;

const CHAIN5: &str = "system chain\nstates x1 x2 x3 x4 x5\ninputs u\ndx1 = sin(x3)\ndx2 = cos(x3)\ndx3 = x4\ndx4 = x5\ndx5 = u\n";
const CASCADE: &str = "system cascade\nstates x1 x2 x3\ninputs u\ndx1 = u\ndx2 = x3^3\ndx3 = u^3\n";
const HEADING: &str = "system heading\nstates x1 x2\ninputs v\ndx1 = sin(v)\ndx2 = cos(v)\n";

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox {
            dir: TempDir::new().unwrap(),
        }
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_nonlin"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn json(&self, name: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Last row of a CSV as numbers.
fn last_row(csv: &str) -> Vec<f64> {
    csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn parse_echoes_normalized_text() {
    let sb = Sandbox::new();
    let f = sb.file("chain.sys", "# the five-state chain\nsystem chain\nstates x1 x2 x3 x4 x5\ninputs u\ndx1=sin( x3 )\ndx2 = cos(x3)\ndx3 = x4\ndx4 = x5\ndx5 = u\n");
    let o = sb.run(&["parse", p(&f)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), CHAIN5);
    let m = sb.json("nonlin-manifest.json");
    assert_eq!(m["command"], "parse");
    assert_eq!(m["exit_code"], 0);
    let hash = m["inputs"][p(&f)].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn parse_rejects_bad_files() {
    let sb = Sandbox::new();
    let dup = sb.file("dup.sys", "system d\nstates x1\ndx1 = x1\ndx1 = 2\n");
    let o = sb.run(&["parse", p(&dup)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("duplicate equation"), "{}", stderr(&o));
    let empty = sb.file("empty.sys", "");
    let o = sb.run(&["parse", p(&empty)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("system"), "{}", stderr(&o));
    let o = sb.run(&["parse", "no-such-file.sys"]);
    assert_eq!(code(&o), 1);
    assert_eq!(sb.json("nonlin-manifest.json")["exit_code"], 1);
}

#[test]
fn extend_writes_the_affine_system_and_record() {
    let sb = Sandbox::new();
    let f = sb.file("cascade.sys", CASCADE);
    let out = sb.path("ext.sys");
    let o = sb.run(&["extend", p(&f), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ext = parse(&sb.read("ext.sys")).unwrap();
    let listed = parse("system listed\nstates x1 x2 x3 x4\ninputs v\ndx1 = x4\ndx2 = x3^3\ndx3 = x4^3\ndx4 = v\n").unwrap();
    assert!(ext.same_up_to_renaming(&listed));
    let record = sb.json("ext.sys.json");
    assert_eq!(record["mapping"][0]["state_index"], 3);
    let m = sb.json("ext.sys.manifest.json");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);

    let free = sb.file("free.sys", "system f\nstates x\ndx = -x\n");
    let o = sb.run(&["extend", p(&free), "--out", p(&sb.path("f.sys"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn reduce_writes_system_and_certificate() {
    let sb = Sandbox::new();
    let f = sb.file("chain.sys", CHAIN5);
    let o = sb.run(&["reduce", p(&f), "--out", p(&sb.path("red.sys")), "--certificate", p(&sb.path("cert.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let red = parse(&sb.read("red.sys")).unwrap();
    assert!(red.same_up_to_renaming(&parse(HEADING).unwrap()));
    let cert = nonlin::ReductionCertificate::from_json(&sb.read("cert.json")).unwrap();
    assert_eq!(cert.count(), 3);
    assert!(nonlin::verify_roundtrip(&cert));

    let irreducible = sb.file("h.sys", HEADING);
    let o = sb.run(&["reduce", p(&irreducible), "--out", p(&sb.path("h2.sys"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(sb.json("h2.sys.json")["steps"].as_array().unwrap().len(), 0);
    assert_eq!(sb.read("h2.sys"), HEADING);
}

fn linear_file(a: [[f64; 3]; 3]) -> String {
    let mut s = String::from("system lin\nstates x1 x2 x3\ninputs u\n");
    for (i, row) in a.iter().enumerate() {
        let terms: Vec<String> = row.iter().enumerate().map(|(j, c)| format!("{c:?}*x{}", j + 1)).collect();
        let tail = if i == 2 { " + u" } else { "" };
        s.push_str(&format!("dx{} = {}{tail}\n", i + 1, terms.join(" + ")));
    }
    s
}

#[test]
fn kalman_check_matches_the_reduced_criterion() {
    let sb = Sandbox::new();
    let cases = [
        [[0.3, -0.7, 0.2], [0.5, 0.1, -0.9], [0.4, 0.8, -0.6]],
        // a12 = 0 and a13 = 0: x1 is cut off from the input
        [[0.3, 0.0, 0.0], [0.5, 0.1, -0.9], [0.4, 0.8, -0.6]],
    ];
    for (k, a) in cases.iter().enumerate() {
        let f = sb.file(&format!("lin{k}.sys"), &linear_file(*a));
        let out = sb.path(&format!("lin{k}.json"));
        let o = sb.run(&["check", p(&f), "--method", "kalman", "--out", p(&out)]);
        let r = sb.json(&format!("lin{k}.json"));
        let controllable = r["controllable"].as_bool().unwrap();
        assert_eq!(controllable, k == 0);
        assert_eq!(r["three_to_two"]["controllable"].as_bool().unwrap(), controllable);
        assert_eq!(code(&o), if controllable { 0 } else { 2 });
    }
}

#[test]
fn kalman_on_a_nonlinear_system_is_a_structured_refusal() {
    let sb = Sandbox::new();
    let f = sb.file("chain.sys", CHAIN5);
    let o = sb.run(&["check", p(&f), "--method", "kalman", "--out", p(&sb.path("r.json"))]);
    assert_eq!(code(&o), 2);
    let r = sb.json("r.json");
    assert_eq!(r["status"], "not_linear");
    assert_eq!(r["detail"]["field"], "f");
    assert_eq!(r["detail"]["state"], "x1");

    let g = sb.file("cascade.sys", CASCADE);
    let o = sb.run(&["check", p(&g), "--method", "larc", "--out", p(&sb.path("c.json"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(sb.json("c.json")["status"], "not_affine");
}

#[test]
fn larc_on_the_chain_is_full_rank_at_depth_four() {
    let sb = Sandbox::new();
    let f = sb.file("chain.sys", CHAIN5);
    let o = sb.run(&["check", p(&f), "--method", "larc", "--depth", "4", "--point", "0,0,0,0,0", "--out", p(&sb.path("r.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = sb.json("r.json");
    assert_eq!(r["rank"], 5);
    assert_eq!(r["full_rank"], true);
    assert!(r["verdict"].as_str().unwrap().contains("not establish global controllability"));
    let o = sb.run(&["check", p(&f), "--method", "larc", "--depth", "2", "--out", p(&sb.path("r2.json"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(sb.json("r2.json")["rank"], 3);
}

#[test]
fn simulate_endpoints() {
    let sb = Sandbox::new();
    let h = sb.file("h.sys", HEADING);
    let ctrl = sb.file("c.json", &format!("[{{\"duration\": 1.0, \"values\": [{:?}]}}]", std::f64::consts::FRAC_PI_2));
    let o = sb.run(&["simulate", p(&h), "--control-file", p(&ctrl), "--out", p(&sb.path("t.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = sb.read("t.csv");
    assert!(csv.starts_with("t,x1,x2\n"));
    let row = last_row(&csv);
    assert!((row[0] - 1.0).abs() < 1e-12);
    assert!((row[1] - 1.0).abs() < 1e-9 && row[2].abs() < 1e-9, "{row:?}");

    let c = sb.file("cascade.sys", CASCADE);
    let one = sb.file("one.json", "[{\"duration\": 1.0, \"values\": [1.0]}]");
    let o = sb.run(&["simulate", p(&c), "--control-file", p(&one), "--step", "0.01", "--out", p(&sb.path("c.csv"))]);
    assert_eq!(code(&o), 0);
    let row = last_row(&sb.read("c.csv"));
    for (got, want) in row[1..].iter().zip([1.0, 0.25, 1.0]) {
        assert!((got - want).abs() < 1e-6, "{row:?}");
    }

    let o = sb.run(&["simulate", p(&c), "--control-file", "missing.json", "--out", p(&sb.path("m.csv"))]);
    assert_eq!(code(&o), 1);
    let o = sb.run(&["simulate", p(&c), "--control-file", p(&one), "--x0", "1,2", "--out", p(&sb.path("m.csv"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_blow_up_is_a_numerical_failure() {
    let sb = Sandbox::new();
    let f = sb.file("b.sys", "system b\nstates x\ninputs u\ndx = x^2 + u\n");
    let ctrl = sb.file("c.json", "[{\"duration\": 2.0, \"values\": [0.0]}]");
    let o = sb.run(&["simulate", p(&f), "--x0", "1", "--control-file", p(&ctrl), "--out", p(&sb.path("t.csv")), "--manifest", p(&sb.path("m.json"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("blow-up"));
    assert_eq!(sb.json("m.json")["exit_code"], 3);
}

const REACH_CFG: &str = r#"{"horizon": 1.5, "segments": 4, "input_box": [[-10, 10]], "samples": 2000,
 "window": [[-2, 2], [-2, 2]], "resolution": 20, "seed": 7}"#;

#[test]
fn reach_is_byte_reproducible() {
    let sb = Sandbox::new();
    let h = sb.file("h.sys", HEADING);
    let cfg = sb.file("cfg.json", REACH_CFG);
    for out in ["a.csv", "b.csv"] {
        let o = sb.run(&["reach", p(&h), "--config", p(&cfg), "--out-csv", p(&sb.path(out)), "--summary", p(&sb.path("s.json"))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(sb.path("a.csv")).unwrap(), std::fs::read(sb.path("b.csv")).unwrap());
    let s = sb.json("s.json");
    assert!(s["coverage"].as_f64().unwrap() > 0.3);
    let m = sb.json("a.csv.manifest.json");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["reach"]["step"], 0.01);
}

#[test]
fn reach_outside_the_reachable_set_is_empty() {
    let sb = Sandbox::new();
    let h = sb.file("h.sys", HEADING);
    let cfg = sb.file("cfg.json", &REACH_CFG.replace("[[-2, 2], [-2, 2]]", "[[5, 6], [5, 6]]"));
    let o = sb.run(&["reach", p(&h), "--config", p(&cfg), "--summary", p(&sb.path("s.json"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(sb.json("s.json")["coverage"], 0.0);
    let bad = sb.file("bad.json", &REACH_CFG.replace("\"resolution\": 20", "\"resolution\": 0"));
    let o = sb.run(&["reach", p(&h), "--config", p(&bad), "--summary", p(&sb.path("s.json"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn compare_heading_is_consistent() {
    let sb = Sandbox::new();
    let h = sb.file("h.sys", HEADING);
    let cfg = sb.file(
        "cfg.json",
        r#"{"horizon": 4.0, "segments": 6, "input_box": [[-10, 10]], "samples": 4000,
            "window": [[-2, 2], [-2, 2]], "resolution": 20, "seed": 11}"#,
    );
    let o = sb.run(&["compare", p(&h), "--config", p(&cfg), "--out", p(&sb.path("r.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = sb.json("r.json");
    assert_eq!(r["verdict"], "consistent");
    assert_eq!(r["threshold"], 0.05);
}

const PLAN: &str = r#"{"segments": [
  {"jump": {"channel": 0, "displacement": 0.8}},
  {"drift": {"duration": 0.5}},
  {"jump": {"channel": 0, "displacement": -1.2}},
  {"drift": {"duration": 0.4}}
]}"#;

fn errors(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn realize_error_column_decreases() {
    let sb = Sandbox::new();
    let c = sb.file("cascade.sys", CASCADE);
    let plan = sb.file("plan.json", PLAN);
    let o = sb.run(&["realize", p(&c), "--plan", p(&plan), "--gain-sweep", "10:80:4", "--p0", "0.1,0,-0.2,0.3", "--step", "1e-4", "--out", p(&sb.path("t.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = sb.read("t.csv");
    assert!(csv.starts_with("gain,error,x1,x2,x3,u\n"));
    let gains: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(gains.len(), 4);
    for (g, want) in gains.iter().zip([10.0, 20.0, 40.0, 80.0]) {
        assert!((g - want).abs() < 1e-9);
    }
    let e = errors(&csv);
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
}

#[test]
fn realize_edge_cases() {
    let sb = Sandbox::new();
    let c = sb.file("cascade.sys", CASCADE);
    let empty = sb.file("empty.json", "[]");
    let o = sb.run(&["realize", p(&c), "--plan", p(&empty), "--out", p(&sb.path("t.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(errors(&sb.read("t.csv")), [0.0]);

    let plan = sb.file("plan.json", PLAN);
    for sweep in ["-10:80:4", "0:80:4", "10:80:0", "10:80"] {
        let o = sb.run(&["realize", p(&c), "--plan", p(&plan), "--gain-sweep", sweep, "--out", p(&sb.path("x.csv"))]);
        assert_eq!(code(&o), 1, "{sweep}");
    }
    let bad = sb.file("bad.json", r#"[{"jump": {"channel": 3, "displacement": 1.0}}]"#);
    let o = sb.run(&["realize", p(&c), "--plan", p(&bad), "--out", p(&sb.path("x.csv"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn manifest_inputs_pin_the_outputs() {
    let sb = Sandbox::new();
    let h = sb.file("h.sys", HEADING);
    let cfg = sb.file("cfg.json", REACH_CFG);
    let run = |m: &str, out: &str| {
        let o = sb.run(&["reach", p(&h), "--config", p(&cfg), "--out-csv", p(&sb.path(out)), "--manifest", p(&sb.path(m))]);
        assert_eq!(code(&o), 0);
    };
    run("m1.json", "o1.csv");
    run("m2.json", "o2.csv");
    let (a, b) = (sb.json("m1.json"), sb.json("m2.json"));
    for key in ["command", "inputs", "config", "seed", "version"] {
        assert_eq!(a[key], b[key], "{key}");
    }
    assert_eq!(sb.read("o1.csv"), sb.read("o2.csv"));
}
