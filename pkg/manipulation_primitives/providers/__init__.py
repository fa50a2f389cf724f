# Providers for signal IO, extraction, sequence models, synthesis and evaluation
