use clap::Parser;
use rmsflow::alloc_count::CountingAlloc;
use rmsflow::cli::{run, Cli};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
