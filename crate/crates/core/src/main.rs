fn main() {
    std::process::exit(som_multipath::cli::dispatch(std::env::args_os()));
}
