use std::process::ExitCode;

fn main() -> ExitCode {
    if let Some(threads) = std::env::var("SUPERSPLAT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    let code = workbench::cli::run(std::env::args_os());
    ExitCode::from(code as u8)
}
