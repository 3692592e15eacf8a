//! Renders a small paired corpus to disk and prints the look of a few identities.
//!
//! cargo run --release --example synthetic_corpus -- /tmp/toy

use std::path::PathBuf;

use mmreid::dataset::Corpus;
use mmreid::synthetic::{appearances, gen_synthetic, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/toy-corpus".into()));
    let spec = SyntheticSpec { n_identities: 12, pairs_per_identity: 4, ..SyntheticSpec::default() };
    gen_synthetic(&spec, 1, &out, true)?;

    let corpus = Corpus::scan(&out)?;
    println!("{} pairs of {} identities in {}", corpus.pairs.len(), corpus.identities.len(), out.display());
    for (k, a) in appearances(4, 1).iter().enumerate() {
        println!("  id {k}: {}", serde_json::to_string(a)?);
    }
    Ok(())
}
