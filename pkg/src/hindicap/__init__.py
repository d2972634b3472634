"""Hindi image captioning: merge encoder-decoder models, greedy decoding,
corpus-level BLEU, and the dataset tooling around them."""

from .corpus import (
    Corpus,
    CaptionRecord,
    EncodedCaption,
    Vocabulary,
    build_vocabulary,
    clean_caption,
    decode_tokens,
    encode_caption,
    load_token_file,
    max_caption_length,
    reduce_captions,
    split_corpus,
    wrap_markers,
)
from .decoding import DecodeResult, greedy_caption
from .errors import DataError, HindicapError
from .evaluation import (
    BleuReport,
    ErrorAnnotation,
    annotate_errors,
    brevity_penalty,
    corpus_bleu,
    evaluate_model,
    modified_precision,
    ngram_counts,
    score_texts,
)
from .features import (
    FeatureCache,
    ImageFeature,
    StubBackend,
    extract_feature,
    load_feature_cache,
    save_feature_cache,
    stub_extract,
)
from .model import (
    CaptionModel,
    ModelConfig,
    attention_combine,
    build_model,
    forward_step,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    BatchGenerator,
    TrainRunSpec,
    TrainingSample,
    make_training_samples,
    repeat_runs,
    train,
)
from .translate import (
    DictionaryTranslator,
    HttpTranslator,
    RetryPolicy,
    TranslationRequest,
    translate_batch,
    translate_corpus,
)

__version__ = "0.1.0"
