//! Runs the desk-scale simulation grid on the bundled corpus and prints the
//! summary tables.
//!
//!     cargo run --release -p xal-core --example desk_grid

use std::sync::Arc;
use std::time::Instant;

use xal_core::bench::{on_off, render_summary, run_grid, ExperimentGrid};
use xal_core::bundled;
use xal_core::sampler::Strategy;
use xal_core::session::SessionConfig;
use xal_core::synthuser::{bundled_taxonomy, bundled_templates, generate_profiles};

fn main() -> xal_core::Result<()> {
    let t = Instant::now();
    let corpus = Arc::new(bundled::simulation_corpus()?);
    let profiles = generate_profiles(&bundled_templates(), &bundled_taxonomy(), &corpus.universe, &[0])?;
    let session = SessionConfig {
        recommendation_epochs: 15,
        ..SessionConfig::default()
    };
    let strategies = vec![Strategy::Cu, Strategy::Ub, Strategy::Uc, Strategy::Muc, Strategy::Random];
    let grid = ExperimentGrid::new(strategies, profiles, session);
    let result = run_grid(corpus, &grid)?;
    println!("{}", render_summary(&result, &[5, 10, 15, 20]));
    for m in &result.means {
        let first = m.points.first().map(|p| p.explanation_accuracy).unwrap_or(f64::NAN);
        let last = m.points.last().map(|p| p.explanation_accuracy).unwrap_or(f64::NAN);
        println!("{} {}: expl_acc epoch1 {first:.4} final {last:.4}", m.strategy, on_off(m.feedback));
    }
    let ub_eq_cu = result.cells.iter().filter(|c| c.key.strategy == Strategy::Cu).all(|c| {
        result.cell(Strategy::Ub, c.key.feedback, &c.key.profile).is_some_and(|u| u.batches.iter().take(5).eq(c.batches.iter().take(5)))
    });
    println!("cu == ub over the elicitation epochs: {ub_eq_cu}");
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
