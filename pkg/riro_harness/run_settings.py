"""Default settings for a harness run. Values here apply whenever the run configuration or the CLI does not
override them."""


from riro_harness.type_definitions import VariantName


# metrics
bleu_max_order = 4  # highest n-gram order in BLEU
display_decimals = 3  # every number in a rendered report, Levenshtein included

# backends
backend_timeout = 60.0  # seconds allowed for one HTTP attempt
max_retries = 2  # retries after the first attempt, on timeouts, transport errors and 5xx
retry_backoff_base = 0.5  # seconds; attempt k waits base * 2**k before the next try
temperature = 0.0  # reproducibility over variety
max_tokens = 512
api_key_env_var = 'RIRO_API_KEY'
model_name = 'phi-2'

# dataset
split_fractions = (0.8, 0.2)  # (train, eval); train size is floored
dataset_format_version = '1'
fixture_seed = 7

# pipeline
parallelism = 1  # concurrent (story, variant) items
default_variants = (VariantName.BASELINE, VariantName.RF, VariantName.FR, VariantName.RFR)
run_output_dir = 'runs'

# report column labels
variant_labels = {
    VariantName.BASELINE: 'Baseline (generate only)',
    VariantName.RF: 'Reshaping (input-focused)',
    VariantName.FR: 'Refining (output-focused)',
    VariantName.RFR: 'RIRO (stacked)',
}

# model_math
quant_bits = 4
quant_block_size = 64
scale_bytes = 4  # one fp32 scale per block
baseline_weight_bits = 16  # storage the quantized estimate is compared against
