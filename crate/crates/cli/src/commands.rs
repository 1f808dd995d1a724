use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use lesionprompt_core::harness::EvalReport;
use lesionprompt_core::io::config::{config_to_toml, read_config};
use lesionprompt_core::io::nifti::{read_mask, read_nifti, write_nifti, NiftiDtype};
use lesionprompt_core::io::prompts_file::{read_prompts, write_prompts, PromptsFile};
use lesionprompt_core::io::report::{write_report_csv, write_report_json};
use lesionprompt_core::phantom::{cohort_ids, generate_phantom, PhantomConfig};
use lesionprompt_core::{build_prompt_channels, case_rng, evaluate_cohort, simulate_clicks, simulate_sequence, Dataset, EvalConfig};

use crate::args::{ConfigArgs, EncodeArgs, EvaluateArgs, PhantomArgs, ServeArgs, SimulateArgs};
use crate::service::{serve, AppState};
use crate::CliError;

fn base_config(path: Option<&Path>) -> Result<EvalConfig, CliError> {
    match path {
        Some(p) => read_config(p).map_err(|e| CliError::usage(e.to_string())),
        None => Ok(EvalConfig::default()),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn encode(args: &EncodeArgs) -> Result<(), CliError> {
    let spec = args.encoding.apply(base_config(args.config.as_deref())?.encoding)?;
    let image = read_nifti(&args.image).with_context(|| format!("reading image {}", args.image.display()))?;
    let grid = image.grid();
    let clicks = read_prompts(&args.prompts, &grid).with_context(|| format!("reading prompts {}", args.prompts.display()))?;
    let (fg, bg) = build_prompt_channels(&clicks, &spec, grid)?;
    create_dir(&args.out)?;
    for (name, v) in [("fg.nii.gz", &fg), ("bg.nii.gz", &bg)] {
        write_nifti(v, args.out.join(name), NiftiDtype::F32, false)?;
    }
    println!(
        "{}: {} foreground, {} background clicks; channel sums {:.6} / {:.6}",
        spec.label(),
        clicks.foreground().len(),
        clicks.background().len(),
        fg.sum(),
        bg.sum()
    );
    Ok(())
}

fn default_case_id(gt: &Path) -> String {
    let name = gt.file_name().and_then(|n| n.to_str()).unwrap_or("case");
    let stem = name.trim_end_matches(".gz").trim_end_matches(".nii");
    if stem == "gt" {
        if let Some(parent) = gt.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()) {
            return parent.to_string();
        }
    }
    stem.to_string()
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let sim = args.sim.apply(base_config(args.config.as_deref())?.sim)?;
    let gt = read_mask(&args.gt).with_context(|| format!("reading mask {}", args.gt.display()))?;
    let case_id = args.case_id.clone().unwrap_or_else(|| default_case_id(&args.gt));
    let mut rng = case_rng(args.seed, &case_id);
    let clicks = simulate_clicks(&gt, &sim, &mut rng)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_prompts(&args.out, &PromptsFile::from_clicks(&case_id, &clicks, Some(&gt.grid())))?;
    println!(
        "{case_id}: {} foreground, {} background clicks -> {}",
        clicks.foreground().len(),
        clicks.background().len(),
        args.out.display()
    );
    Ok(())
}

fn plain_file_name(what: &str, name: &str) -> Result<(), CliError> {
    let p = Path::new(name);
    if p.file_name().map(|f| f == p.as_os_str()) != Some(true) {
        return Err(CliError::usage(format!("{what} must be a plain file name inside --out, got {name:?}")));
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    println!("{} cases, {} failed", report.cases.len() + report.failures.len(), report.failures.len());
    println!("{:>6}  {:>8}  {:>12}  {:>12}", "budget", "dice", "fpvol_mm3", "fnvol_mm3");
    for (b, m) in report.budgets.iter().zip(&report.cohort.means) {
        println!("{b:>6}  {:>8.4}  {:>12.2}  {:>12.2}", m.dice, m.fpvol_mm3, m.fnvol_mm3);
    }
    let a = &report.cohort.auc;
    println!("{:>6}  {:>8.4}  {:>12.2}  {:>12.2}", "auc", a.dice, a.fpvol_mm3, a.fnvol_mm3);
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = args.cfg.resolve()?;
    plain_file_name("output.json", &cfg.output.json)?;
    plain_file_name("output.csv", &cfg.output.csv)?;
    let dataset = Dataset::discover(&args.dataset)?;
    let report = evaluate_cohort(&dataset, &cfg)?;
    create_dir(&args.out)?;
    let json = args.out.join(&cfg.output.json);
    let csv = args.out.join(&cfg.output.csv);
    write_report_json(&json, &report)?;
    write_report_csv(&csv, &report)?;
    print_summary(&report);
    println!("wrote {} and {}", json.display(), csv.display());
    if report.failures.is_empty() {
        Ok(())
    } else {
        let lines: Vec<String> = report.failures.iter().map(|f| format!("  {}: {}", f.case_id, f.error)).collect();
        Err(CliError::Runtime(anyhow::anyhow!(
            "{} case(s) failed:\n{}",
            report.failures.len(),
            lines.join("\n")
        )))
    }
}

pub fn serve_cmd(args: &ServeArgs) -> Result<(), CliError> {
    let cfg = args.cfg.resolve()?;
    let dataset = Dataset::discover(&args.dataset)?;
    let addr = format!("{}:{}", args.host, args.port);
    eprintln!("serving {} cases from {} on http://{addr}", dataset.cases.len(), args.dataset.display());
    let state = Arc::new(AppState::new(dataset, cfg));
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(serve(state, &addr, &args.cors_origins))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}

pub fn phantom(args: &PhantomArgs) -> Result<(), CliError> {
    if args.cases == 0 {
        return Err(CliError::usage("--cases must be >= 1"));
    }
    let cfg = PhantomConfig::default();
    let eval = EvalConfig::default();
    create_dir(&args.out)?;
    for id in cohort_ids(args.cases) {
        let p = generate_phantom(&cfg, args.seed, &id)?;
        p.write(&args.out)?;
        if args.with_prompts {
            let mut rng = case_rng(args.seed, &id);
            let clicks = simulate_sequence(&p.gt, eval.max_budget(), &eval.sim, &mut rng)?;
            let path: PathBuf = args.out.join(&id).join("prompts.json");
            write_prompts(path, &PromptsFile::from_clicks(&id, &clicks, Some(&p.gt.grid())))?;
        }
    }
    println!("wrote {} phantom cases to {}", args.cases, args.out.display());
    Ok(())
}

pub fn config(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = args.cfg.resolve()?;
    print!("{}", config_to_toml(&cfg)?);
    Ok(())
}
