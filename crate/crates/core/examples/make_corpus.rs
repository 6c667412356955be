//! Generate a synthetic demo corpus: frame images, a caption manifest, and
//! a candidate manifest for curation.
//!
//! Usage: cargo run -p diffsw-core --example make_corpus -- <dir> [videos] [seed]

use std::io::Write;

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "corpus".into()));
    let videos: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(42);

    let corpus = diffsw_core::synth::generate_corpus(&dir, videos, seed)?;
    println!("caption manifest: {}", corpus.manifest_path.display());

    let candidates = diffsw_core::synth::generate_candidates(videos * 4, seed);
    let path = dir.join("candidates.jsonl");
    let mut file = std::fs::File::create(&path)?;
    for candidate in &candidates {
        writeln!(file, "{}", serde_json::to_string(candidate)?)?;
    }
    println!("candidate manifest: {}", path.display());
    Ok(())
}
