use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_photonflow");

fn hbt_config(seed: u64, extra_emitter: &str) -> String {
    format!(
        r#"experiment = "hbt"
seed = {seed}
output_dir = "out"

[pulse_train]
rep_rate_mhz = 73.0
pulse_width_ps = 20.0
n_pulses = 200000

[emitter]
wavelength_nm = 945.0
lifetime_tau_ps = 271.0
p_emit = 0.3
target_g2 = 0.05
{extra_emitter}
"#
    )
}

fn lifetime_config(conversion: bool) -> String {
    let mut text = String::from(
        r#"experiment = "lifetime"
seed = 5
output_dir = "out"

[pulse_train]
rep_rate_mhz = 73.0
pulse_width_ps = 20.0
n_pulses = 400000

[emitter]
wavelength_nm = 945.0
lifetime_tau_ps = 271.0
p_emit = 0.4
"#,
    );
    if conversion {
        text.push_str(
            r#"
[conversion]
output_wavelength_nm = 1550.0
pump_power_mw = 327.0
eta_max = 0.417
p_sat_mw = 327.0
"#,
        );
    }
    text
}

fn hom_config(experiment: &str, calib_epsilon: Option<f64>) -> String {
    let mut text = format!(
        r#"experiment = "{experiment}"
seed = 9
output_dir = "out"

[pulse_train]
rep_rate_mhz = 73.0
pulse_width_ps = 20.0
n_pulses = 300000

[emitter]
wavelength_nm = 945.0
lifetime_tau_ps = 271.0
p_emit = 0.3
target_overlap = 0.9

[optics]
classical_visibility = 0.99
"#
    );
    if let Some(e) = calib_epsilon {
        text.push_str(&format!("\n[analysis]\ncalib_epsilon = {e}\n"));
    }
    text
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("PHOTONFLOW_OUTPUT")
            .output()
            .unwrap()
    }

    fn run_into(&self, config: &str, out: &str, extra: &[&str]) -> Output {
        let mut args = vec!["run", config];
        args.extend_from_slice(extra);
        Command::new(BIN)
            .args(&args)
            .current_dir(self.dir.path())
            .env("PHOTONFLOW_OUTPUT", self.path(out))
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn without_timestamp(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.starts_with("created_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn dry_run_prints_resolved_config_and_writes_nothing() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(1, ""));
    let o = ws.run(&["run", "--dry-run", "a.cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("experiment = \"hbt\""));
    assert!(text.contains("# p_multi = "));
    assert!(text.contains("# period_ps = 13699"));
    assert!(!ws.path("out").exists());
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let ws = Workspace::new();
    ws.write("unknown.cfg", &hbt_config(1, "colour = \"blue\""));
    let o = ws.run(&["run", "unknown.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let bad = hbt_config(1, "").replace("p_emit = 0.3", "p_emit = 1.5");
    ws.write("bad.cfg", &bad);
    let o = ws.run(&["run", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p_emit"));

    let o = ws.run(&["run", "--dry-run", "unknown.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ws.path("out").exists());

    let o = ws.run(&["run", "missing.cfg"]);
    assert!(!o.status.success());
}

#[test]
fn same_seed_reproduces_every_artifact() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(3, ""));
    assert!(ws.run_into("a.cfg", "r1", &[]).status.success());
    assert!(ws.run_into("a.cfg", "r2", &["--workers", "1"]).status.success());
    let (a, b) = (files(&ws.path("r1")), files(&ws.path("r2")));
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na == "manifest.txt" {
            assert_eq!(without_timestamp(ba), without_timestamp(bb));
        } else {
            assert_eq!(ba, bb, "{na} differs");
        }
    }
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["ch1.tags", "ch2.tags", "histogram.csv", "hbt.svg", "report.txt", "resolved.cfg", "manifest.txt"] {
        assert!(names.contains(&want), "missing {want}");
    }

    assert!(ws.run_into("a.cfg", "r3", &["--seed", "4"]).status.success());
    let c = files(&ws.path("r3"));
    let tags = |v: &[(String, Vec<u8>)]| v.iter().find(|(n, _)| n == "ch1.tags").unwrap().1.clone();
    assert_ne!(tags(&a), tags(&c));
    let resolved = String::from_utf8(c.iter().find(|(n, _)| n == "resolved.cfg").unwrap().1.clone()).unwrap();
    assert!(resolved.contains("seed = 4"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(6, ""));
    assert!(ws.run_into("a.cfg", "r1", &["--seed", "8"]).status.success());
    std::fs::copy(ws.path("r1/resolved.cfg"), ws.path("again.cfg")).unwrap();
    assert!(ws.run_into("again.cfg", "r2", &[]).status.success());
    assert_eq!(
        std::fs::read(ws.path("r1/report.txt")).unwrap(),
        std::fs::read(ws.path("r2/report.txt")).unwrap()
    );
    assert_eq!(
        std::fs::read(ws.path("r1/ch2.tags")).unwrap(),
        std::fs::read(ws.path("r2/ch2.tags")).unwrap()
    );
}

#[test]
fn output_env_overrides_config_directory() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(1, ""));
    let o = ws.run_into("a.cfg", "elsewhere", &[]);
    assert!(o.status.success());
    assert!(ws.path("elsewhere/report.txt").exists());
    assert!(!ws.path("out").exists());

    let o = ws.run(&["run", "a.cfg"]);
    assert!(o.status.success());
    assert!(ws.path("out/report.txt").exists());
    let created: Vec<_> = std::fs::read_dir(ws.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(created.len(), 3, "{created:?}");
}

#[test]
fn format_flag_selects_tables_or_plots() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(1, ""));
    assert!(ws.run_into("a.cfg", "csv", &["--format", "csv"]).status.success());
    assert!(ws.run_into("a.cfg", "svg", &["--format", "svg"]).status.success());
    assert!(ws.path("csv/histogram.csv").exists() && !ws.path("csv/hbt.svg").exists());
    assert!(ws.path("svg/hbt.svg").exists() && !ws.path("svg/histogram.csv").exists());
    let svg = std::fs::read_to_string(ws.path("svg/hbt.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("<!-- data"));
    let o = ws.run(&["run", "a.cfg", "--format", "png"]);
    assert!(!o.status.success());
}

#[test]
fn manifest_detects_tampering() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(1, ""));
    assert!(ws.run_into("a.cfg", "r", &[]).status.success());
    let ok = ws.run(&["verify", "r"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let manifest = std::fs::read_to_string(ws.path("r/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 1"));
    assert!(manifest.contains("config_sha256 = "));

    let mut bytes = std::fs::read(ws.path("r/ch2.tags")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(ws.path("r/ch2.tags"), bytes).unwrap();
    let bad = ws.run(&["verify", "r"]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("ch2.tags"));
}

#[test]
fn compare_identical_runs_gives_zero_deltas() {
    let ws = Workspace::new();
    ws.write("a.cfg", &hbt_config(1, ""));
    assert!(ws.run_into("a.cfg", "r", &[]).status.success());
    let o = ws.run(&["compare", "r", "r"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut rows = text.lines();
    assert!(rows.next().unwrap().starts_with("quantity,"));
    let mut saw_g2 = false;
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[5].parse::<f64>().unwrap(), 0.0, "{row}");
        assert_eq!(cols[7], "consistent");
        saw_g2 |= cols[0] == "g2";
    }
    assert!(saw_g2);
}

#[test]
fn compare_lifetimes_across_conversion() {
    let ws = Workspace::new();
    ws.write("before.cfg", &lifetime_config(false));
    ws.write("after.cfg", &lifetime_config(true));
    assert!(ws.run_into("before.cfg", "before", &[]).status.success());
    assert!(ws.run_into("after.cfg", "after", &[]).status.success());
    let o = ws.run(&["compare", "before", "after"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let tau = text.lines().find(|l| l.starts_with("tau_ps,")).expect("tau row");
    assert!(tau.ends_with(",consistent"), "{tau}");

    ws.write("hbt.cfg", &hbt_config(1, ""));
    assert!(ws.run_into("hbt.cfg", "hbt", &[]).status.success());
    let o = ws.run(&["compare", "before", "hbt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("different experiments"));
}

#[test]
fn single_polarization_runs() {
    let ws = Workspace::new();
    for exp in ["hom_co", "hom_cross"] {
        ws.write(&format!("{exp}.cfg"), &hom_config(exp, None));
        let o = ws.run_into(&format!("{exp}.cfg"), exp, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(ws.path(&format!("{exp}/ch1.tags")).exists());
        assert!(ws.path(&format!("{exp}/histogram.csv")).exists());
        assert!(stdout(&o).contains("normalized_central_area = "));
    }
    let co: f64 = area(&ws.path("hom_co/report.txt"));
    let cross: f64 = area(&ws.path("hom_cross/report.txt"));
    assert!(co < 0.3 * cross, "{co} vs {cross}");
}

fn area(report: &Path) -> f64 {
    let text = std::fs::read_to_string(report).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("normalized_central_area = "))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn implausible_visibility_exits_with_code_three() {
    let ws = Workspace::new();
    ws.write("ok.cfg", &hom_config("hom_paired", None));
    let o = ws.run_into("ok.cfg", "ok", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("flagged = false"));

    // Claiming a much worse classical visibility than the setup has pushes
    // the corrected value above one.
    ws.write("flag.cfg", &hom_config("hom_paired", Some(0.3)));
    let o = ws.run_into("flag.cfg", "flag", &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("flagged = true"));
    assert!(ws.path("flag/report.txt").exists());
}
