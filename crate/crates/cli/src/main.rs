use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use trapload::analytic_estimates::{e_opt_compact, e_opt_large, q_at_depth, Regime, RegimeEstimate};
use trapload::config::{source_fragment, Preset, RunConfig};
use trapload::field_model::{
    dc_depth_reduction, rf_trap_depth, secular_frequencies, threshold_voltage, true_trap_depth,
};
use trapload::loading_model::{fit_scale, read_data_csv, sweep_curve};
use trapload::species::{ev_to_joules, joules_to_ev, SpeciesName};
use trapload::tof_analysis::{tof_fit, tof_fit_two_component, tof_forward, TofHistogram};
use trapload::uncertainty::curve_band;
use trapload::volumes::{FieldGrid, VolumeModel};
use trapload::Error;

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser)]
#[command(name = "trapload", version, about = "Loading-rate model for ablation-loaded surface-electrode ion traps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in trap: pcb or microfab.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Ion species: ba138 or sr88. Also selects the reference plume and linewidth.
    #[arg(long, global = true)]
    species: Option<String>,
    /// Grid spacing override (m).
    #[arg(long, global = true)]
    grid_spacing: Option<f64>,
    /// Seed for synthetic noise.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form trap quantities.
    Geometry {
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The four nested trapping masks and their areas.
    Volumes {
        /// Comma-separated rf amplitudes (V); defaults to the configured amplitude.
        #[arg(long, value_delimiter = ',')]
        vrf_list: Option<Vec<f64>>,
        /// Kinetic energy (eV).
        #[arg(long, conflicts_with = "speed")]
        ke: Option<f64>,
        /// Atom speed (m/s), converted to kinetic energy.
        #[arg(long)]
        speed: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Loading curve over rf amplitude.
    Sweep {
        /// Comma-separated rf amplitudes (V); defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        vrf_list: Option<Vec<f64>>,
        /// Measured rates (depth_eV, rate, sigma) to fit the scale against.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Skip the uncertainty corners.
        #[arg(long)]
        no_band: bool,
        /// Curve CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-of-flight fit, or a forward histogram when no data is given.
    Tof {
        /// Histogram CSV (time_s, counts).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit two thermal components.
        #[arg(long)]
        two_component: bool,
        /// Detection gate (s).
        #[arg(long)]
        gate: Option<f64>,
        /// Flight distance (m).
        #[arg(long)]
        distance: Option<f64>,
        /// Bin width (s).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Relative Gaussian noise added to a forward histogram.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Scale of a forward histogram (counts).
        #[arg(long, default_value_t = 1e4)]
        amplitude: f64,
        /// Fragment (fit) or histogram (forward) file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form optimal depths and limiting probabilities.
    Analytic {
        /// CSV of the limiting probabilities over depth.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::InvalidParameter { .. } | Error::Config(_) => 2,
        Error::Domain { .. }
        | Error::Instability(_)
        | Error::Inversion(_)
        | Error::Accuracy { .. }
        | Error::FitDegenerate(_)
        | Error::FitNonConvergence { .. } => 3,
        Error::Io(_) | Error::Csv(_) => 4,
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(p)) => {
            let preset: Preset = p.parse()?;
            RunConfig::preset(preset, SpeciesName::Ba138)
        }
        (None, None) => return Err(Error::Usage("one of --config or --preset is required".into())),
    };
    if let Some(s) = &c.species {
        let name: SpeciesName = s.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
        cfg = cfg.with_species(name);
    }
    if let Some(h) = c.grid_spacing {
        cfg = cfg.with_grid_spacing(h)?;
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn geometry(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Error> {
    let g = &cfg.trap;
    let d = &cfg.drive;
    let mut rows: Vec<(&str, f64, &str)> = vec![
        ("a", g.a, "m"),
        ("b", g.b, "m"),
        ("z0", g.rf_null_height(), "m"),
        ("z_esc", g.escape_height(), "m"),
        ("kappa", g.kappa(), ""),
        ("v_rf", d.v_rf, "V"),
        ("rf_frequency", d.omega_rf / std::f64::consts::TAU, "Hz"),
        ("axial_frequency", d.omega_ax / std::f64::consts::TAU, "Hz"),
        ("v_threshold", threshold_voltage(g, d.omega_rf, d.omega_ax, &d.species), "V"),
        ("rf_depth", joules_to_ev(rf_trap_depth(g, d)), "eV"),
        ("dc_reduction", joules_to_ev(dc_depth_reduction(g, d)), "eV"),
        ("true_depth", joules_to_ev(true_trap_depth(g, d)), "eV"),
    ];
    match secular_frequencies(g, d) {
        Ok(f) => {
            rows.push(("secular_x", f.radial_x, "Hz"));
            rows.push(("secular_z", f.radial_z, "Hz"));
            rows.push(("secular_axial", f.axial, "Hz"));
        }
        Err(_) => rows.push(("secular_x", f64::NAN, "Hz")),
    }
    let mut text = format!("species = {}\n", cfg.species);
    for (k, v, u) in &rows {
        if u.is_empty() {
            text.push_str(&format!("{k} = {v:.6e}\n"));
        } else {
            text.push_str(&format!("{k} = {v:.6e} {u}\n"));
        }
    }
    print!("{text}");
    if let Some(p) = out {
        let mut csv = String::from("key,value,unit\n");
        for (k, v, u) in &rows {
            csv.push_str(&format!("{k},{v:e},{u}\n"));
        }
        fs::write(p, csv)?;
    }
    Ok(())
}

fn volumes(cfg: &RunConfig, vrf: Option<Vec<f64>>, ke_j: f64, out: &Path) -> Result<(), Error> {
    fs::create_dir_all(out)?;
    let field = FieldGrid::new(cfg.trap, cfg.grid)?;
    let list = vrf.unwrap_or_else(|| vec![cfg.drive.v_rf]);
    let mut summary = String::from("v_rf_V,ke_eV,stage,area_m2\n");
    for v in list {
        let drive = cfg.drive.with_v_rf(v);
        drive.validate()?;
        let c = VolumeModel::new(&field, drive).cascade(&cfg.beams, &cfg.traj, ke_j);
        for mask in [&c.bare, &c.ke, &c.ke_pi, &c.ke_pi_mm] {
            let stem = format!("{}_{}V", mask.stage, v);
            fs::write(out.join(format!("{stem}.pbm")), mask.to_pbm())?;
            mask.write_csv(fs::File::create(out.join(format!("{stem}.csv")))?)?;
            summary.push_str(&format!("{v},{:e},{},{:e}\n", joules_to_ev(ke_j), mask.stage, mask.area()));
            println!("v_rf = {v} V  {:<9} area = {:.6e} m^2", mask.stage.to_string(), mask.area());
        }
    }
    fs::write(out.join("areas.csv"), summary)?;
    Ok(())
}

fn sweep(cfg: &RunConfig, vrf: Option<Vec<f64>>, data: Option<&Path>, no_band: bool, out: Option<&Path>) -> Result<(), Error> {
    let list = match vrf {
        Some(l) => l,
        None => cfg.v_rf_list.clone(),
    };
    if list.is_empty() {
        return Err(Error::Usage("amplitude list is empty".into()));
    }
    let mut curve = if no_band {
        sweep_curve(&cfg.trap, &cfg.drive, &list, &cfg.beams, &cfg.source, &cfg.grid, &cfg.traj)?
    } else {
        curve_band(&cfg.trap, &cfg.drive, &list, &cfg.beams, &cfg.source, &cfg.grid, &cfg.traj, &cfg.uncertainty)?.0
    };
    if let Some(p) = data {
        let points = read_data_csv(fs::File::open(p)?)?;
        curve.scale = fit_scale(&curve, &points)?;
        eprintln!("scale = {:.6e}", curve.scale);
    }
    let mut buf = Vec::new();
    curve.write_csv(&mut buf, data.is_some())?;
    write_or_print(out, &String::from_utf8_lossy(&buf))
}

#[allow(clippy::too_many_arguments)]
fn tof(
    cfg: &RunConfig,
    seed: u64,
    data: Option<&Path>,
    two: bool,
    gate: Option<f64>,
    distance: Option<f64>,
    bin_width: Option<f64>,
    noise: f64,
    amplitude: f64,
    out: Option<&Path>,
) -> Result<(), Error> {
    let mut setup = cfg.tof;
    if let Some(g) = gate {
        setup.gate = g;
    }
    if let Some(d) = distance {
        setup.distance = d;
    }
    if let Some(w) = bin_width {
        setup.bin_width = w;
    }
    setup.validate()?;
    let species = cfg.drive.species;
    match data {
        Some(p) => {
            let hist = TofHistogram::read_csv(fs::File::open(p)?)?;
            let source = if two {
                let hot = trapload::loading_model::SourceModel { temperature: 4.0 * cfg.source.temperature, ..cfg.source };
                let fit = tof_fit_two_component(&hist, &setup, &species, (&cfg.source, &hot))?;
                eprintln!(
                    "second component: temperature = {:.6e} K, v0 = {:.6e} m/s, amplitude = {:.6e}",
                    fit.second.source.temperature, fit.second.source.v0, fit.second.amplitude
                );
                fit.first.source
            } else {
                let fit = tof_fit(&hist, &setup, &species, &cfg.source)?;
                eprintln!("amplitude = {:.6e}, residual = {:.6e}, iterations = {}", fit.amplitude, fit.residual, fit.iterations);
                fit.source
            };
            write_or_print(out, &source_fragment(&source)?)
        }
        None => {
            if !(noise >= 0.0) {
                return Err(Error::Usage("--noise must be non-negative".into()));
            }
            let mut hist = tof_forward(&cfg.source, &species, &setup)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, noise).map_err(|e| Error::Usage(e.to_string()))?;
            for c in hist.counts.iter_mut() {
                *c = (*c * amplitude * (1.0 + n.sample(&mut rng))).max(0.0);
            }
            let mut buf = Vec::new();
            hist.write_csv(&mut buf)?;
            write_or_print(out, &String::from_utf8_lossy(&buf))
        }
    }
}

fn analytic(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Error> {
    let sp = cfg.drive.species;
    let compact = RegimeEstimate::new(Regime::Compact, cfg.source, cfg.trap, cfg.drive)?;
    let large = RegimeEstimate::new(Regime::Large, cfg.source, cfg.trap, cfg.drive)?;
    let ec = e_opt_compact(&cfg.source, &sp);
    let el = e_opt_large(&cfg.source, &sp, &cfg.trap, &cfg.drive)?;
    let v_at = |e: f64| cfg.drive.v_rf * (e / rf_trap_depth(&cfg.trap, &cfg.drive)).sqrt();
    let q0 = q_at_depth(&cfg.trap, &cfg.drive, sp.kinetic_energy(cfg.source.v0));
    println!("species = {}", cfg.species);
    println!("e_opt_compact = {:.6e} eV", joules_to_ev(ec));
    println!("v_rf_at_e_opt_compact = {:.6e} V", v_at(ec));
    println!("q0 = {q0:.6e}");
    println!("e_opt_large = {:.6e} eV", joules_to_ev(el));
    println!("v_rf_at_e_opt_large = {:.6e} V", v_at(el));
    println!("hot_plume_ratio_at_e_opt_compact = {:.6e}", compact.hot_plume_ratio(ec));
    if compact.hot_plume_violated(ec) {
        eprintln!("warning: hot-plume condition violated at the compact optimum");
    }
    if let Some(p) = out {
        let mut csv = String::from("depth_eV,compact_p_low,compact_p_high,large_p_low,large_p_high\n");
        for k in 1..=200 {
            let e = ev_to_joules(k as f64 * 0.005);
            let (cl, ch) = compact.limits(e);
            let (ll, lh) = large.limits(e);
            csv.push_str(&format!("{:e},{cl:e},{ch:e},{ll:e},{lh:e}\n", joules_to_ev(e)));
        }
        fs::write(p, csv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Geometry { out } => geometry(&cfg, out.as_deref()),
        Command::Volumes { vrf_list, ke, speed, out } => {
            let ke_j = match (ke, speed) {
                (Some(e), _) => ev_to_joules(e),
                (None, Some(v)) => cfg.drive.species.kinetic_energy(v),
                (None, None) => 0.0,
            };
            if !(ke_j >= 0.0) {
                return Err(Error::Usage("kinetic energy must be non-negative".into()));
            }
            volumes(&cfg, vrf_list, ke_j, &out)
        }
        Command::Sweep { vrf_list, data, no_band, out } => sweep(&cfg, vrf_list, data.as_deref(), no_band, out.as_deref()),
        Command::Tof { data, two_component, gate, distance, bin_width, noise, amplitude, out } => tof(
            &cfg,
            cli.common.seed,
            data.as_deref(),
            two_component,
            gate,
            distance,
            bin_width,
            noise,
            amplitude,
            out.as_deref(),
        ),
        Command::Analytic { out } => analytic(&cfg, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
