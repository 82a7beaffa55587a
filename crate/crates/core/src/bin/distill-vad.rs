fn main() {
    std::process::exit(distill_vad::cli::run(std::env::args_os()));
}
