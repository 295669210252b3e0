use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Deserialize;
use serde_json::Value as Json;

use super::builder::InstrumentedBinary;
use super::execute::{ProfileData, RawRun};
use super::toolchain::CoverageTool;
use super::DynEnvError;

const CODE_REGION: u64 = 0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoverageCounts {
    pub regions_covered: u64,
    pub regions_total: u64,
    pub lines_covered: u64,
    pub lines_total: u64,
    pub branches_covered: u64,
    pub branches_total: u64,
}

impl AddAssign for CoverageCounts {
    fn add_assign(&mut self, o: Self) {
        self.regions_covered += o.regions_covered;
        self.regions_total += o.regions_total;
        self.lines_covered += o.lines_covered;
        self.lines_total += o.lines_total;
        self.branches_covered += o.branches_covered;
        self.branches_total += o.branches_total;
    }
}

fn percent(covered: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        covered as f64 * 100.0 / total as f64
    }
}

pub fn format_percent(p: f64) -> String {
    format!("{p:.2}")
}

/// Raw per-function counters as reduced from an exporter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionCoverage {
    pub file_path: String,
    pub function_name: String,
    pub counts: CoverageCounts,
}

impl FunctionCoverage {
    pub fn entry(&self) -> CoverageEntry {
        let c = &self.counts;
        CoverageEntry {
            file_path: self.file_path.clone(),
            function_name: self.function_name.clone(),
            region_coverage: percent(c.regions_covered, c.regions_total),
            line_coverage: percent(c.lines_covered, c.lines_total),
            branch_coverage: percent(c.branches_covered, c.branches_total),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageEntry {
    pub file_path: String,
    pub function_name: String,
    pub region_coverage: f64,
    pub line_coverage: f64,
    pub branch_coverage: f64,
}

impl CoverageEntry {
    /// One JSON object with percentages fixed at two decimals.
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"file_path\":{},\"function_name\":{},\"region_coverage\":{},\"line_coverage\":{},\"branch_coverage\":{}}}",
            Json::String(self.file_path.clone()),
            Json::String(self.function_name.clone()),
            format_percent(self.region_coverage),
            format_percent(self.line_coverage),
            format_percent(self.branch_coverage),
        )
    }
}

/// Rewrites paths under the build copy of the source tree to another root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRebase {
    pub from: PathBuf,
    pub to: PathBuf,
}

impl PathRebase {
    pub fn apply(&self, path: &str) -> String {
        match Path::new(path).strip_prefix(&self.from) {
            Ok(rest) => self.to.join(rest).to_string_lossy().into_owned(),
            Err(_) => path.to_string(),
        }
    }
}

fn rebase(path: &str, r: Option<&PathRebase>) -> String {
    r.map_or_else(|| path.to_string(), |r| r.apply(path))
}

fn parse_err(what: &str, message: impl ToString) -> DynEnvError {
    DynEnvError::Parse {
        what: what.to_string(),
        message: message.to_string(),
    }
}

fn merge(funcs: Vec<FunctionCoverage>) -> Vec<FunctionCoverage> {
    let mut map: BTreeMap<(String, String), CoverageCounts> = BTreeMap::new();
    for f in funcs {
        *map.entry((f.file_path, f.function_name)).or_default() += f.counts;
    }
    map.into_iter()
        .map(|((file_path, function_name), counts)| FunctionCoverage {
            file_path,
            function_name,
            counts,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Region {
    ls: u64,
    cs: u64,
    le: u64,
    count: u64,
}

fn nums(v: &Json) -> Option<Vec<u64>> {
    v.as_array()?.iter().map(Json::as_u64).collect()
}

fn line_counts(regions: &[Region]) -> (u64, u64) {
    let (Some(first), Some(last)) = (
        regions.iter().map(|r| r.ls).min(),
        regions.iter().map(|r| r.le).max(),
    ) else {
        return (0, 0);
    };
    let (mut covered, mut total) = (0, 0);
    for line in first..=last {
        let start_max = regions.iter().filter(|r| r.ls == line).map(|r| r.count).max();
        let wrapped = regions
            .iter()
            .filter(|r| r.ls < line && r.le >= line)
            .max_by_key(|r| (r.ls, r.cs))
            .map(|r| r.count);
        let best = match (start_max, wrapped) {
            (None, None) => continue,
            (a, b) => a.max(b).unwrap_or(0),
        };
        total += 1;
        covered += (best > 0) as u64;
    }
    (covered, total)
}

/// Reduces `llvm-cov export` JSON to per-function counters.
pub fn coverage_from_llvm_export(json: &str, r: Option<&PathRebase>) -> Result<Vec<FunctionCoverage>, DynEnvError> {
    let root: Json = serde_json::from_str(json).map_err(|e| parse_err("llvm-cov export", e))?;
    let data = root["data"]
        .as_array()
        .ok_or_else(|| parse_err("llvm-cov export", "missing data array"))?;
    let mut out = Vec::new();
    for unit in data {
        let Some(functions) = unit["functions"].as_array() else {
            continue;
        };
        for f in functions {
            let name = f["name"]
                .as_str()
                .ok_or_else(|| parse_err("llvm-cov export", "function without name"))?;
            let file = f["filenames"][0].as_str().unwrap_or_default();
            let mut counts = CoverageCounts::default();
            let mut main_file = Vec::new();
            for reg in f["regions"].as_array().into_iter().flatten() {
                let v = nums(reg).filter(|v| v.len() >= 8).ok_or_else(|| parse_err("llvm-cov region", reg))?;
                if v[7] != CODE_REGION {
                    continue;
                }
                counts.regions_total += 1;
                counts.regions_covered += (v[4] > 0) as u64;
                if v[5] == 0 {
                    main_file.push(Region {
                        ls: v[0],
                        cs: v[1],
                        le: v[2],
                        count: v[4],
                    });
                }
            }
            (counts.lines_covered, counts.lines_total) = line_counts(&main_file);
            for br in f["branches"].as_array().into_iter().flatten() {
                let v = nums(br).filter(|v| v.len() >= 6).ok_or_else(|| parse_err("llvm-cov branch", br))?;
                counts.branches_total += 2;
                counts.branches_covered += (v[4] > 0) as u64 + (v[5] > 0) as u64;
            }
            out.push(FunctionCoverage {
                file_path: rebase(file, r),
                function_name: name.to_string(),
                counts,
            });
        }
    }
    Ok(merge(out))
}

#[derive(Deserialize)]
struct GcovDoc {
    #[serde(default)]
    current_working_directory: String,
    files: Vec<GcovFile>,
}

#[derive(Deserialize)]
struct GcovFile {
    file: String,
    #[serde(default)]
    functions: Vec<GcovFunction>,
    #[serde(default)]
    lines: Vec<GcovLine>,
}

#[derive(Deserialize)]
struct GcovFunction {
    name: String,
    #[serde(default)]
    demangled_name: Option<String>,
    blocks: u64,
    blocks_executed: u64,
}

#[derive(Deserialize)]
struct GcovLine {
    count: u64,
    #[serde(default)]
    function_name: Option<String>,
    #[serde(default)]
    branches: Vec<GcovBranch>,
}

#[derive(Deserialize)]
struct GcovBranch {
    count: u64,
}

/// Reduces `gcov --json-format` output; basic blocks stand in for regions.
pub fn coverage_from_gcov_json(json: &str, r: Option<&PathRebase>) -> Result<Vec<FunctionCoverage>, DynEnvError> {
    let mut out = Vec::new();
    // `gcov -t` prints one document per data file.
    for doc in serde_json::Deserializer::from_str(json).into_iter::<GcovDoc>() {
        let doc = doc.map_err(|e| parse_err("gcov json", e))?;
        let cwd = Path::new(&doc.current_working_directory);
        for file in doc.files {
            let path = cwd.join(&file.file).to_string_lossy().into_owned();
            for f in &file.functions {
                let mut counts = CoverageCounts {
                    regions_covered: f.blocks_executed,
                    regions_total: f.blocks,
                    ..Default::default()
                };
                for line in file.lines.iter().filter(|l| l.function_name.as_deref() == Some(&f.name)) {
                    counts.lines_total += 1;
                    counts.lines_covered += (line.count > 0) as u64;
                    counts.branches_total += line.branches.len() as u64;
                    counts.branches_covered += line.branches.iter().filter(|b| b.count > 0).count() as u64;
                }
                out.push(FunctionCoverage {
                    file_path: rebase(&path, r),
                    function_name: f.demangled_name.clone().unwrap_or_else(|| f.name.clone()),
                    counts,
                });
            }
        }
    }
    Ok(merge(out))
}

fn run_tool(cmd: &mut Command, what: &str) -> Result<Vec<u8>, DynEnvError> {
    let out = cmd.output().map_err(DynEnvError::io(format!("running {what}")))?;
    if !out.status.success() {
        return Err(DynEnvError::CoverageToolMissing(format!(
            "{what} failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(out.stdout)
}

/// Exports and reduces the coverage captured by one successful run.
pub fn collect_coverage(
    binary: &InstrumentedBinary,
    run: &RawRun,
    r: Option<&PathRebase>,
) -> Result<Vec<FunctionCoverage>, DynEnvError> {
    let profile = run
        .profile
        .as_ref()
        .ok_or_else(|| DynEnvError::NoProfileData("run produced no coverage profile".into()))?;
    match (&binary.toolchain.coverage, profile) {
        (CoverageTool::Llvm { profdata, cov }, ProfileData::Llvm { profraw }) => {
            if profraw.is_empty() {
                return Err(DynEnvError::NoProfileData("no .profraw files written".into()));
            }
            let merged = run.run_dir.join("merged.profdata");
            run_tool(
                Command::new(profdata).arg("merge").arg("-sparse").args(profraw).arg("-o").arg(&merged),
                "llvm-profdata",
            )?;
            let json = run_tool(
                Command::new(cov)
                    .arg("export")
                    .arg("-format=text")
                    .arg(format!("-instr-profile={}", merged.display()))
                    .arg(&binary.binary_path),
                "llvm-cov export",
            )?;
            coverage_from_llvm_export(&String::from_utf8_lossy(&json), r)
        }
        (CoverageTool::Gcov { gcov }, ProfileData::Gcov { gcda }) => {
            if gcda.is_empty() {
                return Err(DynEnvError::NoProfileData("no .gcda files written".into()));
            }
            let profile_dir = run.run_dir.join("profile");
            let mut all = Vec::new();
            for data in gcda {
                let original = Path::new("/").join(data.strip_prefix(&profile_dir).unwrap_or(data));
                let notes = original.with_extension("gcno");
                fs::copy(&notes, data.with_extension("gcno"))
                    .map_err(DynEnvError::io(format!("copying {}", notes.display())))?;
                let dir = data.parent().unwrap_or(&profile_dir);
                let json = run_tool(
                    Command::new(gcov)
                        .args(["-b", "-t", "--json-format", "-o"])
                        .arg(dir)
                        .arg(data)
                        .current_dir(&run.run_dir),
                    "gcov",
                )?;
                all.extend(coverage_from_gcov_json(&String::from_utf8_lossy(&json), r)?);
            }
            Ok(merge(all))
        }
        (CoverageTool::None, _) => Err(DynEnvError::CoverageToolMissing("no coverage exporter configured".into())),
        _ => Err(DynEnvError::NoProfileData("profile format does not match the coverage tool".into())),
    }
}

/// Writes one entry per line, ordered by file then function.
pub fn write_coverage_report(entries: &[CoverageEntry], path: &Path) -> std::io::Result<()> {
    let mut sorted: Vec<&CoverageEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| (&a.file_path, &a.function_name).cmp(&(&b.file_path, &b.function_name)));
    let mut f = fs::File::create(path)?;
    for e in sorted {
        writeln!(f, "{}", e.to_json_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_executed_is_zero() {
        let json = r#"{"data":[{"functions":[{"name":"cold","filenames":["/s/a.c"],
            "regions":[[1,1,4,2,0,0,0,0],[2,3,2,9,0,0,0,0]],"branches":[[2,3,2,9,0,0,0,0,4]]}]}]}"#;
        let f = coverage_from_llvm_export(json, None).unwrap();
        assert_eq!(
            f[0].entry().to_json_line(),
            r#"{"file_path":"/s/a.c","function_name":"cold","region_coverage":0.00,"line_coverage":0.00,"branch_coverage":0.00}"#
        );
    }

    #[test]
    fn nested_regions_and_lines() {
        let json = r#"{"data":[{"functions":[{"name":"f","filenames":["a.c"],
            "regions":[[1,1,5,2,3,0,0,0],[3,5,4,6,0,0,0,0],[4,1,4,3,0,0,0,2]],"branches":[[3,5,3,9,2,0,0,0,4]]}]}]}"#;
        let c = coverage_from_llvm_export(json, None).unwrap()[0].counts;
        assert_eq!((c.regions_covered, c.regions_total), (1, 2));
        // line 4 is wrapped by the uncovered nested region
        assert_eq!((c.lines_covered, c.lines_total), (4, 5));
        assert_eq!((c.branches_covered, c.branches_total), (1, 2));
    }

    #[test]
    fn gcov_documents() {
        let json = r#"{"current_working_directory":"/b","files":[{"file":"a.c","functions":[
            {"name":"f","demangled_name":"f","blocks":4,"blocks_executed":3}],
            "lines":[{"count":1,"function_name":"f","branches":[{"count":0},{"count":1}]},
                     {"count":0,"function_name":"f","branches":[]}]}]}"#;
        let r = PathRebase {
            from: "/b".into(),
            to: "/w/src".into(),
        };
        let f = coverage_from_gcov_json(json, Some(&r)).unwrap();
        assert_eq!(f[0].file_path, "/w/src/a.c");
        let e = f[0].entry();
        assert_eq!((e.region_coverage, e.line_coverage, e.branch_coverage), (75.0, 50.0, 50.0));
    }

    #[test]
    fn report_is_sorted() {
        let mk = |file: &str, func: &str| CoverageEntry {
            file_path: file.into(),
            function_name: func.into(),
            region_coverage: 1.0,
            line_coverage: 2.0,
            branch_coverage: 3.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_coverage_report(&[mk("b.c", "x"), mk("a.c", "z"), mk("a.c", "y")], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let order: Vec<_> = text.lines().map(|l| &l[14..17]).collect();
        assert_eq!(order, ["a.c", "a.c", "b.c"]);
        assert!(text.lines().nth(0).unwrap().contains("\"y\""));
    }
}
