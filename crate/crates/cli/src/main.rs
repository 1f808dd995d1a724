fn main() {
    std::process::exit(lesionprompt_cli::run(std::env::args_os()));
}
