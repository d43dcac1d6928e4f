//! Benchmark workflow: parameter expansion, template substitution, sandboxed
//! step execution with done-files, pattern extraction and result tables.
//!
//! A benchmark is described by a line-based config file:
//!
//! ```text
//! [benchmark]
//! name    = scaling
//! outpath = bench_run
//! jobs    = 4
//!
//! [parameters]
//! i      = 0, 1, 2
//! nnodes = 1, 2, 4 | indexed-by i
//! mpi    = eager, rendezvous
//! label  = $mpi-$nnodes
//!
//! [substitute]
//! iofile = job.tmpl -> job.sh
//! #NODES# = $nnodes
//!
//! [files]
//! copy = input.dat
//!
//! [steps]
//! do = sh job.sh > out.txt
//! do = touch ready | done_file = ready
//!
//! [patterns]
//! timing_pat = Time to solution: $jube_pat_fp sec.
//!
//! [analyse]
//! file = out.txt
//!
//! [result]
//! style   = pretty
//! sort    = nnodes
//! columns = mpi, nnodes, timing_pat
//! ```
//!
//! Parameters are crossed in document order (first parameter outermost)
//! unless declared `indexed-by` another parameter, in which case they step
//! together with it. A value consisting of `$name` references is resolved
//! after expansion. Placeholders `#NAME#` in substituted files map to the
//! parameter of the same name, ignoring case, unless mapped explicitly.
//! Unknown placeholders are an error. When a pattern matches several times
//! in a file, the last match wins. Comment lines start with `# ` or `;`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{info, warn};
use regex::Regex;

use crate::error::{Error, Result};

/// Regex for `$jube_pat_fp`: a floating-point number.
pub const PAT_FP: &str = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)";
/// Regex for `$jube_pat_int`.
pub const PAT_INT: &str = r"([-+]?\d+)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamMode {
    Crossed,
    IndexedBy(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<String>,
    pub mode: ParamMode,
}

/// Ordered parameter declarations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamSpace {
    pub parameters: Vec<Parameter>,
}

impl ParamSpace {
    pub fn crossed(mut self, name: &str, values: &[&str]) -> Self {
        self.parameters.push(Parameter {
            name: name.into(),
            values: values.iter().map(|s| s.to_string()).collect(),
            mode: ParamMode::Crossed,
        });
        self
    }

    pub fn indexed(mut self, name: &str, values: &[&str], index: &str) -> Self {
        self.parameters.push(Parameter {
            name: name.into(),
            values: values.iter().map(|s| s.to_string()).collect(),
            mode: ParamMode::IndexedBy(index.into()),
        });
        self
    }

    /// Number of runs the space expands to.
    pub fn count(&self) -> usize {
        self.parameters
            .iter()
            .filter(|p| p.mode == ParamMode::Crossed)
            .map(|p| p.values.len())
            .product()
    }

    /// Resolved parameter assignments in expansion order.
    pub fn expand(&self) -> Result<Vec<Vec<(String, String)>>> {
        let mut seen = HashMap::new();
        for (i, p) in self.parameters.iter().enumerate() {
            if seen.insert(p.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("parameter '{}' declared twice", p.name)));
            }
            if p.values.is_empty() {
                return Err(Error::Config(format!("parameter '{}' has no values", p.name)));
            }
        }
        for p in &self.parameters {
            if let ParamMode::IndexedBy(idx) = &p.mode {
                let target = seen
                    .get(idx.as_str())
                    .map(|&i| &self.parameters[i])
                    .ok_or_else(|| Error::Config(format!("'{}' is indexed by unknown '{idx}'", p.name)))?;
                if target.mode != ParamMode::Crossed {
                    return Err(Error::Config(format!("index '{idx}' of '{}' must be crossed", p.name)));
                }
                if target.values.len() != p.values.len() {
                    return Err(Error::Config(format!(
                        "'{}' has {} values but its index '{idx}' has {}",
                        p.name,
                        p.values.len(),
                        target.values.len()
                    )));
                }
            }
        }

        let crossed: Vec<usize> = (0..self.parameters.len())
            .filter(|&i| self.parameters[i].mode == ParamMode::Crossed)
            .collect();
        let mut choice = vec![0usize; self.parameters.len()];
        let mut out = Vec::with_capacity(self.count());
        loop {
            let mut row: Vec<(String, String)> = Vec::with_capacity(self.parameters.len());
            for (i, p) in self.parameters.iter().enumerate() {
                let k = match &p.mode {
                    ParamMode::Crossed => choice[i],
                    ParamMode::IndexedBy(idx) => choice[seen[idx.as_str()]],
                };
                row.push((p.name.clone(), p.values[k].clone()));
            }
            resolve_refs(&mut row)?;
            out.push(row);
            // odometer, last crossed parameter fastest
            let mut pos = crossed.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                let i = crossed[pos];
                choice[i] += 1;
                if choice[i] < self.parameters[i].values.len() {
                    break;
                }
                choice[i] = 0;
            }
        }
    }
}

fn ref_regex() -> Regex {
    Regex::new(r"\$([A-Za-z_]\w*)").expect("valid regex")
}

/// Replaces `$name` references to parameters in every value.
fn resolve_refs(row: &mut [(String, String)]) -> Result<()> {
    let re = ref_regex();
    for _ in 0..=row.len() {
        let lookup: HashMap<String, String> = row.iter().cloned().collect();
        let mut changed = false;
        for (_, v) in row.iter_mut() {
            let new = re
                .replace_all(v, |c: &regex::Captures<'_>| {
                    lookup.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string())
                })
                .into_owned();
            if new != *v {
                *v = new;
                changed = true;
            }
        }
        if !changed {
            return Ok(());
        }
    }
    Err(Error::Config("cyclic parameter references".into()))
}

/// Expands `$name` references to known parameters; other `$` text is kept.
pub fn expand_refs(text: &str, values: &[(String, String)]) -> String {
    ref_regex()
        .replace_all(text, |c: &regex::Captures<'_>| {
            values
                .iter()
                .find(|(n, _)| *n == c[1])
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub command: String,
    pub done_file: Option<String>,
}

/// One concrete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub index: usize,
    pub values: Vec<(String, String)>,
    pub sandbox: PathBuf,
    pub steps: Vec<Step>,
}

impl RunSpec {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }
}

/// Replaces every `#NAME#` placeholder. `explicit` maps full placeholders
/// (`#NAME#`) to values; other placeholders resolve to the parameter with
/// the same name ignoring case.
pub fn substitute(template: &str, values: &[(String, String)], explicit: &[(String, String)]) -> Result<String> {
    let re = Regex::new(r"#([A-Za-z_]\w*)#").expect("valid regex");
    let mut unknown = Vec::new();
    let out = re.replace_all(template, |c: &regex::Captures<'_>| {
        if let Some((_, v)) = explicit.iter().find(|(k, _)| *k == c[0]) {
            return expand_refs(v, values);
        }
        match values.iter().find(|(n, _)| n.eq_ignore_ascii_case(&c[1])) {
            Some((_, v)) => v.clone(),
            None => {
                if !unknown.contains(&c[1].to_string()) {
                    unknown.push(c[1].to_string());
                }
                c[0].to_string()
            }
        }
    });
    if unknown.is_empty() {
        Ok(out.into_owned())
    } else {
        Err(Error::Substitution(unknown))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableStyle {
    #[default]
    Pretty,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub name: String,
    /// Directory holding the config; relative paths resolve against it.
    pub base_dir: PathBuf,
    pub outpath: PathBuf,
    pub jobs: usize,
    pub done_timeout: Duration,
    pub space: ParamSpace,
    /// `(template, output)` file pairs.
    pub iofiles: Vec<(String, String)>,
    /// Explicit placeholder mappings.
    pub placeholders: Vec<(String, String)>,
    pub copy_files: Vec<String>,
    pub steps: Vec<Step>,
    pub patterns: Vec<(String, String)>,
    pub analyse_files: Vec<String>,
    pub style: TableStyle,
    pub sort: Option<String>,
    pub columns: Option<Vec<String>>,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = BenchConfig {
            name: "benchmark".into(),
            base_dir: base_dir.to_path_buf(),
            outpath: PathBuf::from("bench_run"),
            jobs: 1,
            done_timeout: Duration::from_secs(10),
            space: ParamSpace::default(),
            iofiles: Vec::new(),
            placeholders: Vec::new(),
            copy_files: Vec::new(),
            steps: Vec::new(),
            patterns: Vec::new(),
            analyse_files: Vec::new(),
            style: TableStyle::Pretty,
            sort: None,
            columns: None,
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let line = raw.trim();
            if line.is_empty() || line == "#" || line.starts_with("# ") || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "benchmark" | "parameters" | "substitute" | "files" | "steps" | "patterns" | "analyse" | "result"
                ) {
                    return Err(err(format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let list = |v: &str| -> Vec<String> { v.split(',').map(|s| s.trim().to_string()).collect() };
            match section.as_str() {
                "benchmark" => match key {
                    "name" => cfg.name = value.into(),
                    "outpath" => cfg.outpath = PathBuf::from(value),
                    "jobs" => cfg.jobs = value.parse().map_err(|_| err(format!("bad job count '{value}'")))?,
                    "done_timeout" => {
                        let s: f64 = value.parse().map_err(|_| err(format!("bad timeout '{value}'")))?;
                        cfg.done_timeout = Duration::from_secs_f64(s.max(0.0));
                    }
                    _ => return Err(err(format!("unknown benchmark key '{key}'"))),
                },
                "parameters" => {
                    let (vals, mode) = match value.split_once('|') {
                        Some((v, m)) => {
                            let m = m.trim();
                            let idx = m
                                .strip_prefix("indexed-by")
                                .map(str::trim)
                                .filter(|s| !s.is_empty())
                                .ok_or_else(|| err(format!("unknown parameter mode '{m}'")))?;
                            (v, ParamMode::IndexedBy(idx.into()))
                        }
                        None => (value, ParamMode::Crossed),
                    };
                    cfg.space.parameters.push(Parameter {
                        name: key.into(),
                        values: list(vals),
                        mode,
                    });
                }
                "substitute" => {
                    if key == "iofile" {
                        let (a, b) = value
                            .split_once("->")
                            .ok_or_else(|| err("iofile needs 'in -> out'".into()))?;
                        cfg.iofiles.push((a.trim().into(), b.trim().into()));
                    } else if key.len() > 2 && key.starts_with('#') && key.ends_with('#') {
                        cfg.placeholders.push((key.into(), value.into()));
                    } else {
                        return Err(err(format!("unknown substitute key '{key}'")));
                    }
                }
                "files" => match key {
                    "copy" => cfg.copy_files.extend(list(value)),
                    _ => return Err(err(format!("unknown files key '{key}'"))),
                },
                "steps" => match key {
                    "do" => {
                        let (cmd, done) = match value.rsplit_once('|') {
                            Some((c, d)) if d.trim().starts_with("done_file") => {
                                let f = d
                                    .trim()
                                    .strip_prefix("done_file")
                                    .and_then(|r| r.trim().strip_prefix('='))
                                    .map(str::trim)
                                    .filter(|s| !s.is_empty())
                                    .ok_or_else(|| err("expected 'done_file = name'".into()))?;
                                (c.trim(), Some(f.to_string()))
                            }
                            _ => (value, None),
                        };
                        cfg.steps.push(Step {
                            command: cmd.into(),
                            done_file: done,
                        });
                    }
                    _ => return Err(err(format!("unknown steps key '{key}'"))),
                },
                "patterns" => cfg.patterns.push((key.into(), value.into())),
                "analyse" => match key {
                    "file" => cfg.analyse_files.extend(list(value)),
                    _ => return Err(err(format!("unknown analyse key '{key}'"))),
                },
                "result" => match key {
                    "style" | "table" => {
                        cfg.style = match value {
                            "pretty" => TableStyle::Pretty,
                            "csv" => TableStyle::Csv,
                            _ => return Err(err(format!("unknown table style '{value}'"))),
                        }
                    }
                    "sort" => cfg.sort = Some(value.into()),
                    "columns" => cfg.columns = Some(list(value)),
                    _ => return Err(err(format!("unknown result key '{key}'"))),
                },
                _ => return Err(err("key outside of any section".into())),
            }
        }
        cfg.compile_patterns()?;
        Ok(cfg)
    }

    fn compile_patterns(&self) -> Result<Vec<(String, Regex)>> {
        self.patterns
            .iter()
            .map(|(name, pat)| {
                let src = pat.replace("$jube_pat_fp", PAT_FP).replace("$jube_pat_int", PAT_INT);
                Regex::new(&src)
                    .map(|re| (name.clone(), re))
                    .map_err(|e| Error::Config(format!("pattern '{name}': {e}")))
            })
            .collect()
    }

    pub fn outdir(&self) -> PathBuf {
        self.base_dir.join(&self.outpath)
    }

    /// Concrete runs with sandbox `<outpath>/<index>`.
    pub fn expand(&self) -> Result<Vec<RunSpec>> {
        let out = self.outdir();
        Ok(self
            .space
            .expand()?
            .into_iter()
            .enumerate()
            .map(|(index, values)| RunSpec {
                index,
                sandbox: out.join(index.to_string()),
                steps: self
                    .steps
                    .iter()
                    .map(|s| Step {
                        command: expand_refs(&s.command, &values),
                        done_file: s.done_file.clone(),
                    })
                    .collect(),
                values,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunState {
    Pending,
    Running,
    Done,
    Failed(String),
}

fn prepare_sandbox(cfg: &BenchConfig, spec: &RunSpec) -> Result<()> {
    std::fs::create_dir_all(&spec.sandbox).map_err(|e| Error::io(&spec.sandbox, e))?;
    for f in &cfg.copy_files {
        let src = cfg.base_dir.join(f);
        let name = Path::new(f).file_name().unwrap_or(f.as_ref());
        let dst = spec.sandbox.join(name);
        std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
    }
    for (tmpl, out) in &cfg.iofiles {
        let src = cfg.base_dir.join(tmpl);
        let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
        let dst = spec.sandbox.join(out);
        std::fs::write(&dst, substitute(&text, &spec.values, &cfg.placeholders)?).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

fn run_steps(cfg: &BenchConfig, spec: &RunSpec) -> RunState {
    if let Err(e) = prepare_sandbox(cfg, spec) {
        return RunState::Failed(e.to_string());
    }
    for step in &spec.steps {
        let out = Command::new("sh")
            .arg("-c")
            .arg(&step.command)
            .current_dir(&spec.sandbox)
            .output();
        let out = match out {
            Ok(o) => o,
            Err(e) => return RunState::Failed(format!("cannot start '{}': {e}", step.command)),
        };
        let append = |name: &str, data: &[u8]| {
            use std::io::Write;
            let path = spec.sandbox.join(name);
            let _ = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(data));
        };
        append("stdout", &out.stdout);
        append("stderr", &out.stderr);
        if !out.status.success() {
            return RunState::Failed(format!(
                "'{}' exited with {}: {}",
                step.command,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        if let Some(done) = &step.done_file {
            let path = spec.sandbox.join(done);
            let start = Instant::now();
            while !path.exists() {
                if start.elapsed() > cfg.done_timeout {
                    return RunState::Failed(format!("done file '{done}' did not appear"));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
    RunState::Done
}

/// Runs every spec in its sandbox on a pool of `cfg.jobs` threads.
pub fn execute(cfg: &BenchConfig, specs: &[RunSpec]) -> Vec<RunState> {
    let states = Mutex::new(vec![RunState::Pending; specs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.max(1).min(specs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = specs.get(i) else { break };
                states.lock().unwrap()[i] = RunState::Running;
                let st = run_steps(cfg, spec);
                match &st {
                    RunState::Failed(msg) => warn!("run {i} failed: {msg}"),
                    _ => info!("run {i} done"),
                }
                states.lock().unwrap()[i] = st;
            });
        }
    });
    states.into_inner().unwrap()
}

/// Parameter and pattern columns, one row per run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Stable sort by one column: numerically when every cell parses as a
    /// number, otherwise lexically. Empty cells go last.
    pub fn sort_by(&mut self, column: &str) -> Result<()> {
        let i = self
            .columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::Config(format!("no column '{column}' to sort by")))?;
        let numeric = self
            .rows
            .iter()
            .all(|r| r[i].is_empty() || r[i].parse::<f64>().is_ok());
        self.rows.sort_by(|a, b| match (a[i].is_empty(), b[i].is_empty()) {
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ if numeric => {
                let x: f64 = a[i].parse().unwrap_or(0.0);
                let y: f64 = b[i].parse().unwrap_or(0.0);
                x.total_cmp(&y)
            }
            _ => a[i].cmp(&b[i]),
        });
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = line(&self.columns);
        out.push('\n');
        let _ = writeln!(
            out,
            "{}",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
        );
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn render(&self, style: TableStyle) -> String {
        match style {
            TableStyle::Pretty => self.to_pretty(),
            TableStyle::Csv => self.to_csv(),
        }
    }
}

/// Value of the last match of every pattern in `text`.
pub fn extract_text(text: &str, patterns: &[(String, Regex)]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (name, re) in patterns {
        if let Some(c) = re.captures_iter(text).last() {
            let v = c.get(1).or_else(|| c.get(0)).map_or("", |m| m.as_str());
            out.insert(name.clone(), v.to_string());
        }
    }
    out
}

/// Builds the result table from the analysed files of every sandbox.
pub fn extract(cfg: &BenchConfig, specs: &[RunSpec]) -> Result<ResultTable> {
    let patterns = cfg.compile_patterns()?;
    let all_columns: Vec<String> = cfg
        .space
        .parameters
        .iter()
        .map(|p| p.name.clone())
        .chain(patterns.iter().map(|(n, _)| n.clone()))
        .collect();
    let columns = cfg.columns.clone().unwrap_or_else(|| all_columns.clone());
    if let Some(c) = columns.iter().find(|c| !all_columns.contains(c)) {
        return Err(Error::Config(format!("unknown result column '{c}'")));
    }
    let mut table = ResultTable {
        columns: columns.clone(),
        rows: Vec::with_capacity(specs.len()),
    };
    for spec in specs {
        let mut text = String::new();
        for f in &cfg.analyse_files {
            match std::fs::read_to_string(spec.sandbox.join(f)) {
                Ok(t) => {
                    text.push_str(&t);
                    text.push('\n');
                }
                Err(e) => warn!("run {}: cannot read {f}: {e}", spec.index),
            }
        }
        let found = extract_text(&text, &patterns);
        let row = columns
            .iter()
            .map(|c| {
                if let Some(v) = spec.get(c) {
                    return v.to_string();
                }
                found.get(c).cloned().unwrap_or_else(|| {
                    warn!("run {}: pattern '{c}' did not match", spec.index);
                    String::new()
                })
            })
            .collect();
        table.rows.push(row);
    }
    if let Some(col) = &cfg.sort {
        table.sort_by(col)?;
    }
    Ok(table)
}

/// Outcome of a whole benchmark.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub specs: Vec<RunSpec>,
    pub states: Vec<RunState>,
    pub table: ResultTable,
}

/// Expands, executes and analyses a benchmark.
pub fn sweep(cfg: &BenchConfig) -> Result<SweepOutcome> {
    let specs = cfg.expand()?;
    let states = execute(cfg, &specs);
    let table = extract(cfg, &specs)?;
    Ok(SweepOutcome { specs, states, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_space_counts() {
        let i: Vec<String> = (0..10).map(|k| k.to_string()).collect();
        let i: Vec<&str> = i.iter().map(String::as_str).collect();
        let s = ParamSpace::default()
            .crossed("i", &i)
            .indexed("nnodes", &i, "i")
            .indexed("ntasks", &i, "i")
            .crossed("mpi", &["intel", "parastation"]);
        assert_eq!(s.expand().unwrap().len(), 20);
        let s = ParamSpace::default()
            .crossed("i", &i)
            .crossed("nnodes", &i)
            .crossed("ntasks", &i)
            .crossed("mpi", &["intel", "parastation"]);
        assert_eq!(s.count(), 2000);
        assert_eq!(ParamSpace::default().expand().unwrap().len(), 1);
    }

    #[test]
    fn expansion_order_is_index_major() {
        let s = ParamSpace::default()
            .crossed("i", &["0", "1"])
            .indexed("n", &["a", "b"], "i")
            .crossed("m", &["x", "y"]);
        let rows: Vec<String> = s
            .expand()
            .unwrap()
            .iter()
            .map(|r| r.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(""))
            .collect();
        assert_eq!(rows, ["0ax", "0ay", "1bx", "1by"]);
    }

    #[test]
    fn index_length_mismatch() {
        let s = ParamSpace::default().crossed("i", &["0", "1"]).indexed("n", &["a"], "i");
        assert!(matches!(s.expand(), Err(Error::Config(_))));
    }

    #[test]
    fn derived_parameters() {
        let s = ParamSpace::default()
            .crossed("a", &["1", "2"])
            .crossed("b", &["$a-x"]);
        let rows = s.expand().unwrap();
        assert_eq!(rows[1][1].1, "2-x");
    }

    #[test]
    fn substitution_rules() {
        let v = vec![("space_size".to_string(), "4".to_string())];
        assert_eq!(substitute("srun -n #SPACE_SIZE#", &v, &[]).unwrap(), "srun -n 4");
        assert_eq!(substitute("plain", &v, &[]).unwrap(), "plain");
        match substitute("#TYPO# #SPACE_SIZE#", &v, &[]) {
            Err(Error::Substitution(names)) => assert_eq!(names, ["TYPO"]),
            other => panic!("unexpected {other:?}"),
        }
        let explicit = vec![("#N#".to_string(), "$space_size".to_string())];
        assert_eq!(substitute("-N #N#", &v, &explicit).unwrap(), "-N 4");
    }

    #[test]
    fn last_match_wins() {
        let cfg = BenchConfig::parse("[patterns]\nt = Time to solution: $jube_pat_fp sec.\n", Path::new(".")).unwrap();
        let pats = cfg.compile_patterns().unwrap();
        let got = extract_text("Time to solution: 1.5 sec.\nTime to solution: 2.5e-1 sec.\n", &pats);
        assert_eq!(got["t"], "2.5e-1");
        assert!(extract_text("nothing", &pats).is_empty());
    }

    #[test]
    fn bad_regex_is_config_error() {
        let r = BenchConfig::parse("[patterns]\nt = (unclosed\n", Path::new("."));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn parse_error_carries_line() {
        match BenchConfig::parse("[parameters]\na = 1\nnot a pair\n", Path::new(".")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn numeric_sort() {
        let mut t = ResultTable {
            columns: vec!["n".into()],
            rows: vec![vec!["10".into()], vec!["".into()], vec!["9".into()]],
        };
        t.sort_by("n").unwrap();
        assert_eq!(t.column("n").unwrap(), ["9", "10", ""]);
    }
}
