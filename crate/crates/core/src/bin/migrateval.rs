fn main() {
    std::process::exit(migrateval::cli::run_command(std::env::args_os()));
}
