use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use siracusa_sim::cal::CalibrationSet;
use siracusa_sim::networks::mobilenet_v2;
use siracusa_sim::runner::{
    compare_scenarios, emit_report, fit_calibration, load_calibration, load_network,
    run_network, FitTargets, NetworkDesc, RunnerError,
};
use siracusa_sim::tiler::Scenario;
use siracusa_sim::timing::{kernel_rate, BenchKernel, OperatingPoint, WeightSource};

#[derive(Parser)]
#[command(name = "siracusa-sim", about = "Siracusa cluster performance/energy simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    L3flash,
    L3mram,
    L2mram,
    L1mram,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::L3flash => Scenario::L3Flash,
            ScenarioArg::L3mram => Scenario::L3Mram,
            ScenarioArg::L2mram => Scenario::L2Mram,
            ScenarioArg::L1mram => Scenario::L1Mram,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OppArg {
    Nominal,
    LowPower,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Dense3x3,
    Dw3x3,
    Pw1x1,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Mram,
    L1,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario over a network and write a per-layer CSV report.
    Simulate {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        scenario: ScenarioArg,
        #[arg(long, value_enum, default_value = "nominal")]
        opp: OppArg,
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all four scenarios and print the comparison table.
    Compare {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nominal")]
        opp: OppArg,
    },
    /// Print peak throughput and efficiency of one kernel benchmark.
    Peak {
        #[arg(long)]
        kernel: KernelArg,
        #[arg(long, default_value_t = 8)]
        qw: u8,
        #[arg(long, value_enum, default_value = "mram")]
        weights: WeightsArg,
        #[arg(long)]
        cal: Option<PathBuf>,
    },
    /// Run the built-in self-checks (functional oracle + model identities).
    Validate,
    /// Fit the derived calibration constants against published aggregates.
    Fit {
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn get_cal(path: &Option<PathBuf>) -> Result<CalibrationSet, RunnerError> {
    match path {
        Some(p) => load_calibration(p),
        None => Ok(CalibrationSet::default()),
    }
}

fn get_net(path: &Option<PathBuf>) -> Result<NetworkDesc, RunnerError> {
    match path {
        Some(p) => load_network(p),
        None => Ok(mobilenet_v2()),
    }
}

fn get_opp(opp: OppArg, cal: &CalibrationSet) -> OperatingPoint {
    match opp {
        OppArg::Nominal => OperatingPoint::nominal(cal),
        OppArg::LowPower => OperatingPoint::low_power(cal),
    }
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.cmd {
        Cmd::Simulate { network, scenario, opp, cal, out } => {
            let cal = get_cal(&cal)?;
            let net = get_net(&network)?;
            let opp = get_opp(opp, &cal);
            let report = run_network(&net, scenario.into(), &opp, &cal)?;
            emit_report(&report, &out)?;
            println!(
                "{} @ {}: {:.3} ms, {:.3} mJ, {:.1} fps, {:.1} mW avg @ 30 fps",
                report.scenario.token(),
                report.opp,
                report.latency_s * 1e3,
                report.mj_per_inference,
                report.fps,
                report.avg_power_30fps_w * 1e3
            );
            println!("report written to {}", out.display());
        }
        Cmd::Compare { network, cal, opp } => {
            let cal = get_cal(&cal)?;
            let net = get_net(&network)?;
            let opp = get_opp(opp, &cal);
            print!("{}", compare_scenarios(&net, &opp, &cal)?.render());
        }
        Cmd::Peak { kernel, qw, weights, cal } => {
            let cal = get_cal(&cal)?;
            let kernel = match kernel {
                KernelArg::Dense3x3 => BenchKernel::Dense3x3,
                KernelArg::Dw3x3 => BenchKernel::Depthwise3x3,
                KernelArg::Pw1x1 => BenchKernel::Pointwise1x1,
            };
            let ws = match weights {
                WeightsArg::Mram => WeightSource::Mram,
                WeightsArg::L1 => WeightSource::L1,
            };
            for opp in [OperatingPoint::nominal(&cal), OperatingPoint::low_power(&cal)] {
                let (thr, eff) = kernel_rate(kernel, qw, ws, &opp, &cal);
                println!(
                    "{:<9} qw={qw} weights={:<4} {:>7.1} GOp/s {:>6.2} TOp/s/W",
                    opp.name,
                    match ws {
                        WeightSource::Mram => "mram",
                        WeightSource::L1 => "l1",
                    },
                    thr / 1e9,
                    eff / 1e12
                );
            }
        }
        Cmd::Validate => {
            validate()?;
            println!("all checks passed");
        }
        Cmd::Fit { targets, network, cal, out } => {
            let base = get_cal(&cal)?;
            let net = get_net(&network)?;
            let targets = match targets {
                Some(p) => FitTargets::parse(
                    &std::fs::read_to_string(&p)?,
                    &p.to_string_lossy(),
                )?,
                None => FitTargets::reference(),
            };
            let fitted = fit_calibration(&net, &targets, &base)?;
            match out {
                Some(p) => {
                    fitted.save(&p)?;
                    println!("fitted calibration written to {}", p.display());
                }
                None => print!("{}", fitted.render()),
            }
        }
    }
    Ok(())
}

/// Fast self-check: functional oracle equivalence on random layers plus
/// the model's structural identities.
fn validate() -> Result<(), RunnerError> {
    use rand::Rng;
    use rand::SeedableRng;
    use siracusa_sim::qnn::{conv_neureka, conv_ref, pack_weights, LayerSpec, Mode, NeurekaOutput, QTensor};
    use siracusa_sim::xfer::{cluster_dma_peak, l1_aggregate_peak, mram_port_peak};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for trial in 0..24 {
        let mode = [Mode::Dense3x3, Mode::Depthwise3x3, Mode::Pointwise1x1][trial % 3];
        let c_in = [1, 3, 28, 33, 64][rng.gen_range(0..5)];
        let c_out = [1, 16, 32, 40][rng.gen_range(0..4)];
        let (c_in, c_out) = if mode == Mode::Depthwise3x3 { (c_out, c_out) } else { (c_in, c_out) };
        let qw = rng.gen_range(2..=8);
        let stride = if rng.gen_bool(0.5) { 1 } else { 2 };
        let pad = if mode == Mode::Pointwise1x1 { 0 } else { 1 };
        let spec = LayerSpec::new(mode, c_in, c_out, qw, stride, pad, None, true).unwrap();
        let h = rng.gen_range(4..12);
        let w = rng.gen_range(4..12);
        let mut x = QTensor::zeros(h, w, c_in);
        for v in x.data.iter_mut() {
            *v = rng.gen();
        }
        let wmin = -(1i32 << (qw - 1));
        let wmax = (1i32 << (qw - 1)) - 1;
        let n = spec.weight_count();
        let weights: Vec<i8> = (0..n).map(|_| rng.gen_range(wmin..=wmax) as i8).collect();
        let blocks = pack_weights(&weights, &spec).unwrap();
        let got = conv_neureka(&x, &blocks, &spec).unwrap();
        let want = conv_ref(&x, &weights, &spec).unwrap();
        match got {
            NeurekaOutput::Raw(t) => assert_eq!(t.data, want.data, "functional mismatch"),
            NeurekaOutput::Quantized(_) => unreachable!(),
        }
        print!(".");
    }
    println!();
    assert_eq!(mram_port_peak(360e6), 92.16e9);
    assert_eq!(l1_aggregate_peak(360e6), 184.32e9);
    assert_eq!(cluster_dma_peak(360e6), 23.04e9);
    let cal = CalibrationSet::default();
    assert_eq!(cal.job_overhead_k(), 390.0);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunnerError::Parse { .. } | RunnerError::Cal(_) => ExitCode::from(2),
                RunnerError::Unschedulable(_) => ExitCode::from(3),
                RunnerError::FitDiverged(_) => ExitCode::from(4),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
