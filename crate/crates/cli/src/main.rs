fn main() {
    std::process::exit(overcomplete_cli::dispatch(std::env::args_os()));
}
