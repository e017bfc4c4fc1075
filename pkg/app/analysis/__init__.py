from .fitting import fit_dense_to_structured
from .heatmap import export_heatmap, read_heatmap_csv
from .rank import RankDiagnostic, attention_score_rank, offdiagonal_block_rank, rank_report
from .similarity import MixerSnapshot, SimilarityReport, jsd, nuclear_norm, psnr, similarity_report

__all__ = [
    "MixerSnapshot",
    "RankDiagnostic",
    "SimilarityReport",
    "attention_score_rank",
    "export_heatmap",
    "fit_dense_to_structured",
    "jsd",
    "nuclear_norm",
    "offdiagonal_block_rank",
    "psnr",
    "rank_report",
    "read_heatmap_csv",
    "similarity_report",
]
