//! Writes a planted-partition dataset directory for trying the CLI.
//!
//! `cargo run -p gcompose-cli --example synthetic -- <dir> [nodes-per-class] [classes] [seed]`

use std::path::PathBuf;

use gcompose_core::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(
        args.next()
            .ok_or("usage: synthetic <dir> [per-class] [classes] [seed]")?,
    );
    let per_class = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let classes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("synthetic")
        .to_lowercase();
    let ds = generate(&SyntheticConfig::balanced(&name, classes, per_class, seed))?;
    ds.write(&dir)?;
    println!(
        "{}: {} nodes, {} edges, {} classes",
        ds.name,
        ds.num_nodes(),
        ds.topology.num_edges(),
        classes
    );
    Ok(())
}
