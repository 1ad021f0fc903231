"""convrec: a modular conversational recommender toolkit.

Modules (recommenders, generators, processors) exchange text in a small
entity-markup wire format; pipelines orchestrate them into a chat system;
artifacts make every module and pipeline portable; the monitor and service
layers expose execution for chat and debugging.
"""

from .artifacts import (
    ArtifactManifest,
    DigestMismatchError,
    NotFoundError,
    from_pretrained,
    push_to_hub,
    save_pretrained,
)
from .autorec import (
    AutoRecParams,
    RatingRecommender,
    RatingVector,
    SentimentLexicon,
    autorec_forward,
    autorec_loss_grad,
    extract_ratings,
    init_params,
    mention_sentiment,
    train,
)
from .core import BaseModule, ModuleConfig, ModuleOutput, RecList, register_module
from .generation import (
    ChatCompletionGenerator,
    GenChunk,
    LlmEndpointConfig,
    PromptTemplate,
    TemplateGenerator,
    generate,
    render_prompt,
    template_generate,
)
from .linking import EntityLinker, LinkerConfig, link_entities, link_utterance
from .monitor import (
    Span,
    Trace,
    TraceCollector,
    assemble_graph,
    assemble_timeline,
    monitored,
)
from .pipelines import (
    ExpansionPipeline,
    FillblankPipeline,
    InsufficientRecommendationsError,
    PipelineConfig,
    PipelineOutput,
)
from .protocol import (
    Dialog,
    EntitySpan,
    Role,
    Utterance,
    append_utterance,
    parse_dialog,
    render_dialog,
)
from .service import ChatService, create_app
from .tokenization import (
    CompositeTokenizer,
    EncodedInputs,
    EntityCatalog,
    Vocab,
    WordTokenizer,
    word_tokenize,
)
from .weights import WeightsFile, deserialize_weights, serialize_weights

__version__ = "0.1.0"

__all__ = [
    "ArtifactManifest",
    "AutoRecParams",
    "BaseModule",
    "ChatCompletionGenerator",
    "ChatService",
    "CompositeTokenizer",
    "Dialog",
    "DigestMismatchError",
    "EncodedInputs",
    "EntityCatalog",
    "EntityLinker",
    "EntitySpan",
    "ExpansionPipeline",
    "FillblankPipeline",
    "GenChunk",
    "InsufficientRecommendationsError",
    "LinkerConfig",
    "LlmEndpointConfig",
    "ModuleConfig",
    "ModuleOutput",
    "NotFoundError",
    "PipelineConfig",
    "PipelineOutput",
    "PromptTemplate",
    "RatingRecommender",
    "RatingVector",
    "RecList",
    "Role",
    "SentimentLexicon",
    "Span",
    "TemplateGenerator",
    "Trace",
    "TraceCollector",
    "Utterance",
    "Vocab",
    "WeightsFile",
    "WordTokenizer",
    "append_utterance",
    "assemble_graph",
    "assemble_timeline",
    "autorec_forward",
    "autorec_loss_grad",
    "create_app",
    "deserialize_weights",
    "extract_ratings",
    "from_pretrained",
    "generate",
    "init_params",
    "link_entities",
    "link_utterance",
    "mention_sentiment",
    "monitored",
    "parse_dialog",
    "push_to_hub",
    "register_module",
    "render_dialog",
    "render_prompt",
    "save_pretrained",
    "serialize_weights",
    "template_generate",
    "train",
    "word_tokenize",
]
