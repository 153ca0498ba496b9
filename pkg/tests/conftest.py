import hypothesis

# Keep property tests deterministic run-to-run (the acceptance suite pins
# byte-identical outputs; flaky example generation would muddy that story).
hypothesis.settings.register_profile(
    "scrc", hypothesis.settings(derandomize=True, max_examples=100)
)
hypothesis.settings.load_profile("scrc")
