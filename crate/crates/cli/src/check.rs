use std::process::ExitCode;

use anomaly_forge::selfcheck::{run_suite, SuiteOptions};
use anomaly_forge::sgblock::{build_graph, SgParams, DEFAULT_K};
use anomaly_forge::{rng::rng_from_seed, Tensor3d};
use anyhow::{Context, Result};
use rand::Rng;

use crate::SgCheckArgs;

const DEMO_SIDE: usize = 16;
const DEMO_CHANNELS: usize = 16;

fn dump_graph(args: &SgCheckArgs, path: &std::path::Path) -> Result<()> {
    let k = args.topk.unwrap_or(DEFAULT_K);
    let mut params = SgParams::<f64>::random(DEMO_CHANNELS, DEMO_CHANNELS, 8, k, args.seed)?;
    params.eliminate_positional = !args.no_eliminate_ps;
    let mut rng = rng_from_seed(args.seed ^ 0x6a09_e667);
    // a repeating pattern, so similar nodes also occur far apart
    let x = Tensor3d::from_fn(DEMO_SIDE, DEMO_SIDE, DEMO_CHANNELS, |r, c, ch| {
        let phase = ch as f64 * 0.7;
        (r as f64 / 2.5 + phase).sin() * (c as f64 / 2.5 - phase).cos() + 0.05 * rng.gen_range(-1.0..1.0)
    });
    let graph = build_graph(&x, &params)?;
    std::fs::write(path, serde_json::to_string(&graph)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("graph: {} nodes, k = {}, written to {}", graph.n, graph.k(), path.display());
    Ok(())
}

pub fn run(args: &SgCheckArgs) -> Result<ExitCode> {
    let opts = SuiteOptions {
        seeds: args.seeds.max(1),
        base_seed: args.seed,
        k: args.topk,
        eliminate_positional: !args.no_eliminate_ps,
        inject_fault: args.inject_fault,
    };
    let report = run_suite(&opts);
    let mut failures = 0;
    for c in &report {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        print!(
            "{verdict} {:<24} cases={:<5} max_err={:.3e} tol={:.1e}",
            c.name, c.cases, c.max_error, c.tolerance
        );
        match &c.detail {
            Some(d) => println!("  ({d})"),
            None => println!(),
        }
        failures += !c.passed as usize;
    }
    if let Some(path) = &args.dump_graph {
        dump_graph(args, path)?;
    }
    if failures == 0 {
        println!("all {} checks passed", report.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failures} of {} checks failed", report.len());
        Ok(ExitCode::FAILURE)
    }
}
