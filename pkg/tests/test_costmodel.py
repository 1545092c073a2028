import pandas as pd
import pytest

from compression import parse_strategy
from config import BenchConfig
from costmodel import (COLUMNAS_COSTE, attention_cost, microbench, reference_attention_flops,
                       scaling_table, write_cost_csv)
from errores import ErrorConfiguracion


def test_coste_de_un_token():
    flops, memoria = attention_cost(1, 48, 4)
    assert flops == 4 * (4 * 48 * 48 + 2 * 48)
    assert memoria == 4 * 2 * 48 * 8


def test_coste_superlineal():
    f1, _ = attention_cost(64, 48, 4)
    f2, _ = attention_cost(128, 48, 4)
    assert f2 > 2 * f1


@pytest.mark.parametrize("L,d,B", [(64, 48, 4), (1, 6, 1), (37, 12, 3)])
def test_coste_coincide_con_el_recuento_de_productos(L, d, B):
    assert attention_cost(L, d, B)[0] == reference_attention_flops(L, d, B)


def test_tabla_uniforme_ocho():
    puntos = scaling_table(128, parse_strategy("uniform:8"), 3, 48, 4)
    assert [p.seq_len_vanilla for p in puntos] == [128, 256, 384]
    assert [p.seq_len_compressed for p in puntos] == [128, 144, 160]
    assert [p.n_frames for p in puntos] == [8, 16, 24]


def test_comprimido_nunca_supera_al_completo():
    puntos = scaling_table(128, parse_strategy("linear:16:1"), 8, 48, 4)
    assert puntos[0].flops_vanilla == puntos[0].flops_compressed
    razones = []
    for p in puntos[1:]:
        assert p.flops_compressed < p.flops_vanilla
        assert p.mem_compressed < p.mem_vanilla
        razones.append(p.flops_vanilla / p.flops_compressed)
    assert razones == sorted(razones)


@pytest.mark.parametrize("estrategia", ["uniform:8", "uniform:2", "log:16:1"])
def test_comprimido_estrictamente_menor_desde_dos_segmentos(estrategia):
    for p in scaling_table(128, parse_strategy(estrategia), 8, 48, 4)[1:]:
        assert p.flops_compressed < p.flops_vanilla


def test_microbench_comprimido_mas_rapido_con_cuatro_segmentos():
    ajustes = BenchConfig(seg_tokens=128, ratio=8.0, d_model=48, heads=4, blocks=4, repetitions=3)
    [(t_vanilla, t_comprimido)] = microbench(ajustes, [4], repetitions=3)
    assert t_vanilla > t_comprimido


def test_geometria_invalida():
    with pytest.raises(ErrorConfiguracion):
        scaling_table(100, parse_strategy("uniform:8"), 2, 48, 4, frame_hw=(4, 4))


def test_microbench_y_csv(tmp_path):
    ajustes = BenchConfig(segments=2, seg_tokens=8, d_model=12, heads=2, blocks=1,
                          frame_hw=(2, 2), repetitions=1, ratio=2.0)
    tiempos = microbench(ajustes, [1, 2], repetitions=1)
    assert len(tiempos) == 2 and all(t > 0 for par in tiempos for t in par)
    puntos = scaling_table(8, parse_strategy(ajustes.estrategia_efectiva()), 2, 12, 1, (2, 2))
    df = pd.read_csv(write_cost_csv(puntos, tiempos, tmp_path / "cost.csv"))
    assert list(df.columns) == COLUMNAS_COSTE
    assert len(df) == 2
    sin_tiempos = pd.read_csv(write_cost_csv(puntos, None, tmp_path / "sin.csv"))
    assert sin_tiempos["time_vanilla_ms"].isna().all()
