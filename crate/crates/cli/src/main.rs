fn main() {
    std::process::exit(feedback_lab::run(std::env::args_os()));
}
