use scstream::cli;

fn main() {
    std::process::exit(cli::run());
}
