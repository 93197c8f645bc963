fn main() {
    std::process::exit(ofdma_sched::cli::main_with(std::env::args_os()));
}
