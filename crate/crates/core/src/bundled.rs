//! The recipe corpus, schemas, taxonomy and templates shipped with the crate.

use crate::corpus::{ingest_str, Corpus, IngestConfig};
use crate::error::Result;

pub const RECIPES_JSONL: &str = include_str!("../data/recipes.jsonl");
pub const SIMULATION_SCHEMA: &str = include_str!("../data/simulation.toml");
pub const HUMAN_SCHEMA: &str = include_str!("../data/human.toml");
pub const TAXONOMY: &str = include_str!("../data/taxonomy.toml");
pub const TEMPLATES: &str = include_str!("../data/templates.toml");

/// Ingredient-only encoding used by the simulation benchmarks.
pub fn simulation_corpus() -> Result<Corpus> {
    ingest_str(RECIPES_JSONL, &IngestConfig::from_toml_str(SIMULATION_SCHEMA)?, "bundled:recipes")
}

/// Full encoding with cuisine, category and binned nutrition.
pub fn human_corpus() -> Result<Corpus> {
    ingest_str(RECIPES_JSONL, &IngestConfig::from_toml_str(HUMAN_SCHEMA)?, "bundled:recipes")
}
