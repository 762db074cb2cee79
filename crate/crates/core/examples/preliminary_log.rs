//! Regenerates `fixtures/preliminary_experiment.jsonl`.
//!
//! cargo run -p coimagine-core --example preliminary_log > crates/core/fixtures/preliminary_experiment.jsonl

#[path = "../tests/support/preliminary.rs"]
mod preliminary;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    print!("{}", preliminary::generate(work.path()).await);
}
