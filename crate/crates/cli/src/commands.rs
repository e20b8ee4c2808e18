use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nemhom_core::colloid::{sweep, sweep_csv};
use nemhom_core::homogenize::f_hom;
use nemhom_core::shapes::{catalogue_entry, moment_matrix, CATALOGUE};
use nemhom_core::verify::run_selected;
use nemhom_core::{design_linear_term, minimize, Error, HomPotential, QTensor, Result, RunConfig, SymMatrix, TensorField, Vec3};

use crate::Command;

const DEFAULT_OUTPUT_DIR: &str = "nemhom-out";

pub fn run(command: Command, output_dir: Option<PathBuf>) -> Result<ExitCode> {
    match command {
        Command::Moments { names, order } => moments(&names, order),
        Command::Design { p, w, a, a_prime, save } => {
            let design = design_linear_term(&SymMatrix(to_six(&p)?), w, a, a_prime)?;
            let report = design.report_csv();
            print!("{report}");
            if save {
                let dir = output(output_dir, None)?;
                fs::write(dir.join("design.csv"), &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fhom { config, samples } => {
            let cfg = load(&config)?;
            print!("{}", fhom_table(&cfg, &fs::read_to_string(&samples)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Minimize { config } => {
            let cfg = load(&config)?;
            let dir = output(output_dir, cfg.output_dir.as_deref())?;
            let grid = cfg.grid()?;
            let species = cfg.species()?;
            let init = TensorField::new(grid, cfg.boundary()?, cfg.initialization())?;
            let potential = HomPotential::new(&grid, &species);
            let (field, report, outcome) = minimize(&init, &cfg.material()?, &potential, &cfg.minimize_options())?;
            field.write_binary(&mut BufWriter::new(fs::File::create(dir.join("field.nqf"))?))?;
            fs::write(dir.join("energy.csv"), format!("{}\n{}\n", nemhom_core::EnergyReport::CSV_HEADER, report.csv_row()))?;
            fs::write(dir.join("trace.csv"), outcome.trace_csv())?;
            print!("{report}");
            println!("status       {}", outcome.status);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, timings, no_fields } => {
            let cfg = load(&config)?;
            let dir = output(output_dir, cfg.output_dir.as_deref())?;
            let opts = cfg.sweep_options()?;
            let mut dump_err = None;
            let rows = sweep(&cfg.container(), &cfg.boundary()?, &cfg.material()?, &cfg.species()?, &opts, |row, fields| {
                if no_fields || dump_err.is_some() {
                    return;
                }
                let k = opts.eps_list.iter().position(|e| *e == row.eps).unwrap_or(0);
                let path = dir.join(format!("field_eps{k}.nqf"));
                let res = fs::File::create(&path)
                    .map_err(Error::from)
                    .and_then(|f| fields.extended.write_binary(&mut BufWriter::new(f)));
                if let Err(e) = res {
                    dump_err = Some(e);
                }
            })?;
            if let Some(e) = dump_err {
                return Err(e);
            }
            let csv = sweep_csv(&rows, timings);
            fs::write(dir.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { seed, only } => {
            if let Some(bad) = only.iter().find(|id| !(1..=12).contains(*id)) {
                return Err(Error::InvalidParameter(format!("no criterion with id {bad}")));
            }
            let report = run_selected(&only, seed);
            print!("{}", report.text());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}

fn to_six(p: &[f64]) -> Result<[f64; 6]> {
    p.try_into().map_err(|_| Error::InvalidParameter(format!("P needs 6 entries, got {}", p.len())))
}

fn load(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::from_json(&fs::read_to_string(path)?)?;
    for v in cfg.validate()? {
        eprintln!("warning: assumption ({}) violated: {}", v.label, v.detail);
    }
    Ok(cfg)
}

fn output(cli: Option<PathBuf>, config: Option<&str>) -> Result<PathBuf> {
    let dir = cli.or_else(|| config.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn moments(names: &[String], order: usize) -> Result<ExitCode> {
    let names: Vec<String> = if names.is_empty() { CATALOGUE.iter().map(|s| s.to_string()).collect() } else { names.to_vec() };
    let mut out = String::from("shape,area,xx,yy,zz,xy,xz,yz,analytic_delta\n");
    for name in &names {
        let entry = catalogue_entry(name)?;
        let parts = entry.components();
        let area: f64 = parts.iter().map(|s| s.area()).sum();
        let moment = parts.iter().fold(SymMatrix::ZERO, |acc, s| acc + moment_matrix(s, order));
        let delta = entry.analytic_moment().map(|a| format!("{:.3e}", moment.max_abs_diff(&a))).unwrap_or_else(|| "NA".into());
        let _ = write!(out, "{name},{area:.15e}");
        for v in moment.0 {
            let _ = write!(out, ",{v:.15e}");
        }
        let _ = writeln!(out, ",{delta}");
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

/// Reads `q0..q4[,x,y,z]` rows (header optional) and appends `f_hom`.
pub fn fhom_table(cfg: &RunConfig, samples: &str) -> Result<String> {
    let species = cfg.species()?;
    let mut out = String::from("q0,q1,q2,q3,q4,x,y,z,f_hom\n");
    for (line_no, line) in samples.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("samples line {}: {e}", line_no + 1)))?;
        let (q, x) = match vals.len() {
            5 => (QTensor([vals[0], vals[1], vals[2], vals[3], vals[4]]), Vec3::zeros()),
            8 => (QTensor([vals[0], vals[1], vals[2], vals[3], vals[4]]), Vec3::new(vals[5], vals[6], vals[7])),
            n => return Err(Error::Parse(format!("samples line {}: expected 5 or 8 columns, got {n}", line_no + 1))),
        };
        let v = f_hom(&species, &q, &x);
        let _ = writeln!(
            out,
            "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{v:.15e}",
            q.0[0], q.0[1], q.0[2], q.0[3], q.0[4], x.x, x.y, x.z
        );
    }
    Ok(out)
}
