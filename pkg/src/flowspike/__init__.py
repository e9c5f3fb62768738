"""flowspike: bidirectional flow histograms classified by a leaky
integrate-and-fire network trained with surrogate-gradient BPTT."""

from .features import (
    FlowHistogram,
    FlowWindow,
    HistogramConfig,
    build_histogram,
    shuffle_columns_shared,
    shuffle_rows_independent,
    windowize,
)
from .pcap import (
    Direction,
    Flow,
    FlowKey,
    PacketRecord,
    assemble_flows,
    classify_packet,
    parse_pcap,
    read_packet_csv,
    write_packet_csv,
)
from .snn import (
    ForwardTrace,
    LifParams,
    ReadoutParams,
    SnnModel,
    backward,
    forward,
    lif_forward,
    load_model,
    loss,
    predict,
    readout_forward,
    save_model,
)
from .training import (
    BetaZero,
    ColumnShuffle,
    DatasetSplit,
    RowShuffle,
    TrainConfig,
    evaluate,
    fit,
    split_dataset,
    weighted_sampler,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
