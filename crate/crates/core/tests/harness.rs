use pitlab::harness::*;
use pitlab::Error;
use std::path::Path;

fn listing_space(cross: bool) -> ParamSpace {
    let i: Vec<String> = (0..10).map(|k| k.to_string()).collect();
    let i: Vec<&str> = i.iter().map(String::as_str).collect();
    let nnodes = ["1", "1", "1", "1", "1", "1", "2", "4", "6", "12"];
    let ntasks = ["1", "2", "4", "6", "12", "24", "24", "24", "24", "24"];
    let s = ParamSpace::default().crossed("i", &i);
    let s = if cross {
        s.crossed("nnodes", &nnodes).crossed("ntasks", &ntasks)
    } else {
        s.indexed("nnodes", &nnodes, "i").indexed("ntasks", &ntasks, "i")
    };
    s.crossed("mpi", &["intel", "parastation"])
}

#[test]
fn indexed_space_expands_to_twenty() {
    let s = listing_space(false);
    assert_eq!(s.count(), 20);
    let runs = s.expand().unwrap();
    assert_eq!(runs.len(), 20);
    let get = |r: &Vec<(String, String)>, k: &str| r.iter().find(|(n, _)| n == k).unwrap().1.clone();
    assert_eq!(get(&runs[0], "i"), "0");
    assert_eq!(get(&runs[0], "mpi"), "intel");
    assert_eq!(get(&runs[1], "mpi"), "parastation");
    assert_eq!(get(&runs[19], "nnodes"), "12");
    assert_eq!(get(&runs[19], "ntasks"), "24");
    assert_eq!(s.expand().unwrap(), runs);
}

#[test]
fn crossed_space_expands_to_the_product() {
    let s = listing_space(true);
    assert_eq!(s.count(), 2000);
    assert_eq!(s.expand().unwrap().len(), 2000);
}

#[test]
fn empty_space_is_one_run() {
    assert_eq!(ParamSpace::default().expand().unwrap(), vec![Vec::<(String, String)>::new()]);
}

#[test]
fn indexed_length_mismatch_is_config_error() {
    let s = ParamSpace::default().crossed("i", &["0", "1"]).indexed("n", &["1"], "i");
    assert!(matches!(s.expand(), Err(Error::Config(_))));
    let s = ParamSpace::default().indexed("n", &["1"], "missing");
    assert!(s.expand().is_err());
}

#[test]
fn substitution() {
    let vals = vec![("space_size".to_string(), "4".to_string())];
    assert_eq!(substitute("srun -n #SPACE_SIZE#", &vals, &[]).unwrap(), "srun -n 4");
    assert_eq!(substitute("plain text", &vals, &[]).unwrap(), "plain text");
    match substitute("a #TYPO# b", &vals, &[]) {
        Err(Error::Substitution(names)) => assert_eq!(names, vec!["TYPO".to_string()]),
        other => panic!("expected substitution error, got {other:?}"),
    }
    let explicit = vec![("#N#".to_string(), "$space_size".to_string())];
    let once = substitute("-n #N#", &vals, &explicit).unwrap();
    assert_eq!(once, "-n 4");
    assert_eq!(substitute(&once, &vals, &explicit).unwrap(), once);
}

#[test]
fn pattern_extraction_last_match_wins() {
    let re = regex::Regex::new(&format!("Time to solution: {PAT_FP} sec.")).unwrap();
    let pats = vec![("t".to_string(), re)];
    let got = extract_text("Time to solution: 1.5 sec.\nTime to solution: 12.5 sec.\n", &pats);
    assert_eq!(got["t"], "12.5");
    assert!(extract_text("nothing here", &pats).get("t").is_none());
    let re = regex::Regex::new(&format!("x = {PAT_FP}")).unwrap();
    let got = extract_text("x = -3.25e-4", &[("x".to_string(), re)]);
    assert_eq!(got["x"], "-3.25e-4");
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const CONFIG: &str = "\
[benchmark]
name = toy
outpath = runs
jobs = 3

[parameters]
i = 0, 1, 2
n = 5, 7, 9 | indexed-by i
kind = a, b

[substitute]
iofile = job.tmpl -> job.sh
#COUNT# = $n

[files]
copy = data.txt

[steps]
do = sh job.sh > out.txt
do = touch ready | done_file = ready

[patterns]
val = value: $jube_pat_fp
cnt = count: $jube_pat_int

[analyse]
file = out.txt

[result]
style = csv
sort = val
columns = kind, n, val, cnt
";

#[test]
fn sweep_sandboxes_and_table() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg", CONFIG);
    write(dir.path(), "job.tmpl", "echo value: 1.0\necho \"value: #COUNT#.5\"\necho count: #COUNT#\necho #KIND# > kind.txt\n");
    write(dir.path(), "data.txt", "payload");
    let cfg = BenchConfig::load(&dir.path().join("cfg")).unwrap();
    let out = sweep(&cfg).unwrap();
    assert_eq!(out.specs.len(), 6);
    assert!(out.states.iter().all(|s| *s == RunState::Done));
    for spec in &out.specs {
        assert_eq!(spec.sandbox, dir.path().join("runs").join(spec.index.to_string()));
        let script = std::fs::read_to_string(spec.sandbox.join("job.sh")).unwrap();
        assert!(script.contains(&format!("count: {}", spec.get("n").unwrap())));
        assert_eq!(std::fs::read_to_string(spec.sandbox.join("kind.txt")).unwrap().trim(), spec.get("kind").unwrap());
        assert!(spec.sandbox.join("data.txt").exists());
    }
    let t = &out.table;
    assert_eq!(t.columns, vec!["kind", "n", "val", "cnt"]);
    assert_eq!(t.column("val").unwrap(), vec!["5.5", "5.5", "7.5", "7.5", "9.5", "9.5"]);
    assert_eq!(t.column("cnt").unwrap(), vec!["5", "5", "7", "7", "9", "9"]);
    assert!(t.to_csv().starts_with("kind,n,val,cnt\n"));

    // removing one sandbox leaves the others intact
    std::fs::remove_dir_all(&out.specs[0].sandbox).unwrap();
    let again = extract(&cfg, &out.specs).unwrap();
    assert_eq!(again.rows.len(), 6);
    assert_eq!(again.column("val").unwrap().iter().filter(|v| v.is_empty()).count(), 1);
}

#[test]
fn failing_step_skips_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[parameters]\nx = 1\n[steps]\ndo = echo fail >&2; exit 3\ndo = touch never\n";
    let cfg = BenchConfig::parse(text, dir.path()).unwrap();
    let specs = cfg.expand().unwrap();
    let states = execute(&cfg, &specs);
    match &states[0] {
        RunState::Failed(msg) => assert!(msg.contains("fail")),
        other => panic!("expected failure, got {other:?}"),
    }
    assert!(!specs[0].sandbox.join("never").exists());
}

#[test]
fn missing_done_file_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[benchmark]\ndone_timeout = 0.2\n[steps]\ndo = true | done_file = ready\n";
    let cfg = BenchConfig::parse(text, dir.path()).unwrap();
    let states = execute(&cfg, &cfg.expand().unwrap());
    assert!(matches!(&states[0], RunState::Failed(m) if m.contains("ready")));
}

#[test]
fn done_file_written_later_is_awaited() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[benchmark]\ndone_timeout = 5\n[steps]\ndo = (sleep 0.3; touch ready) > /dev/null 2>&1 & | done_file = ready\n";
    let cfg = BenchConfig::parse(text, dir.path()).unwrap();
    let states = execute(&cfg, &cfg.expand().unwrap());
    assert_eq!(states[0], RunState::Done);
}

#[test]
fn config_errors_name_the_line() {
    let bad = "[parameters]\nx = 1\n[bogus]\n";
    assert!(matches!(BenchConfig::parse(bad, Path::new(".")), Err(Error::Parse { line: 3, .. })));
    let bad_re = "[patterns]\np = ([unclosed\n";
    assert!(matches!(BenchConfig::parse(bad_re, Path::new(".")), Err(Error::Config(_))));
}

#[test]
fn unresolved_template_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "t", "#NOPE#");
    let cfg = BenchConfig::parse("[substitute]\niofile = t -> s\n[steps]\ndo = true\n", dir.path()).unwrap();
    let states = execute(&cfg, &cfg.expand().unwrap());
    assert!(matches!(&states[0], RunState::Failed(m) if m.contains("NOPE")));
}

#[test]
fn pretty_table_is_aligned() {
    let t = ResultTable {
        columns: vec!["a".into(), "long_name".into()],
        rows: vec![vec!["1".into(), "2".into()], vec!["333".into(), "4".into()]],
    };
    let text = t.to_pretty();
    let widths: Vec<usize> = text.lines().map(str::len).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
}

#[test]
fn numeric_sort() {
    let mut t = ResultTable {
        columns: vec!["n".into()],
        rows: vec![vec!["10".into()], vec!["9".into()], vec!["".into()], vec!["2.5".into()]],
    };
    t.sort_by("n").unwrap();
    assert_eq!(t.column("n").unwrap(), vec!["2.5", "9", "10", ""]);
    assert!(t.sort_by("missing").is_err());
}
