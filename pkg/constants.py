# Model defaults (desk scale)
model_defaults = {
    'layers': 8,
    'dim': 64,
    'heads': 4,
    'context': 128,
}

# Shared probe head F_phi
probe_hidden_widths = (128, 64)

LOG_CLAMP = 1e-12
LAYER_NORM_EPS = 1e-5
FEED_FORWARD_MULTIPLIER = 4
EMBEDDING_INIT_STD = 0.1
POSITIONAL_INIT_RANGE = 0.1

# Head h of H penalizes attention to a key k positions back by k * 2^(-8h/H)
RECENCY_SLOPE_EXPONENT = 8

# Byte-level vocabulary plus specials
BYTE_VOCAB_SIZE = 256
SPECIAL_TOKENS = ('<pad>',)
PAD_ID = BYTE_VOCAB_SIZE

PROMPT_TEMPLATE = '{instruction}{text} Answer:'

PROBE_STRATEGIES = ('lt', 'sat', 'avt')
SELECTION_STRATEGIES = ('dominance', 'threshold', 'first-std')
SYNTH_TASKS = ('keyword', 'suffix', 'count')

# Synthetic tasks: keyword letters never appear in filler words
synth_keywords = ('ZAX', 'QOF', 'JUV', 'KEB', 'WYD', 'HIM', 'LNP', 'GRT')
synth_labels = ('alpha', 'bravo', 'charlie', 'delta', 'echo', 'foxtrot', 'golf', 'hotel')
synth_filler = (
    'the', 'market', 'report', 'shares', 'rose', 'fell', 'today', 'said',
    'bank', 'growth', 'price', 'quarter', 'outlook', 'steady', 'trade', 'rates',
)
synth_instruction = 'Classify: '
count_marker = 'ZAX'

CHECKPOINT_MAGIC = b'LAETCKPT'

REPORT_DECIMALS = 6

log_levels = {
    'error': 'ERROR',
    'warn': 'WARNING',
    'info': 'INFO',
    'debug': 'DEBUG',
}
