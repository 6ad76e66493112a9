fn main() -> std::process::ExitCode {
    influence_prune::cli::main()
}
