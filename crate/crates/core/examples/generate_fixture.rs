//! Regenerates the bundled synthetic corpus.
//!
//! ```text
//! cargo run -p homonmt --example generate_fixture -- crates/core/data/fixture
//! ```

use std::path::PathBuf;

use homonmt::fixture::{generate, DEFAULT_SEED};

fn main() -> homonmt::error::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixture"));
    let fixture = generate(DEFAULT_SEED);
    fixture.write(&dir)?;
    for (name, text) in fixture.files() {
        println!("{:<10} {:>5} lines", name, text.lines().count());
    }
    Ok(())
}
