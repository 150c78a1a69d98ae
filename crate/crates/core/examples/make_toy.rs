//! Writes the toy treebank used by the README walkthrough and the CLI tests.
//!
//! `cargo run -p g2g-core --example make_toy -- data/toy`

use std::path::PathBuf;

use g2g_core::{synth, write_conllu};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    std::fs::create_dir_all(&dir)?;
    let all = synth::toy_corpus(2024, 80);
    let (train, rest) = all.split_at(50);
    let (dev, test) = rest.split_at(15);
    write_conllu(train, dir.join("train.conllu"))?;
    write_conllu(dev, dir.join("dev.conllu"))?;
    write_conllu(test, dir.join("test.conllu"))?;
    Ok(())
}
