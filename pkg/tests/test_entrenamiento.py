import os

import numpy as np
import pytest

from checkpoint_utils import load_checkpoint
from compression import parse_strategy
from config import TrainConfig
from entrenamiento import (NOMBRES_CHECKPOINT, entrenar, modelo_inicial, suavizar, train_stage)
from errores import ErrorArranque
from flexformer import FlexFormerParams
from modelo import cargar_modelo

PEQUENO = dict(d_model=12, heads=2, enc_blocks=1, dec_blocks=1, dit_blocks=1, grid=(6, 2, 2),
               n_text=1, strategy="uniform:2")


def config(stage, steps, **cambios):
    return TrainConfig(stage=stage, steps=steps, batch_size=1, **{**PEQUENO, **cambios})


def test_cero_pasos_guarda_la_inicializacion(tmp_path):
    resultado = train_stage(config(1, 0, seed=5), tmp_path)
    assert resultado.checkpoint == os.path.join(str(tmp_path), NOMBRES_CHECKPOINT[1])
    estado = load_checkpoint(resultado.checkpoint)
    inicial = FlexFormerParams(12, 2, 1, 1, seed=5).parameters().state()
    for nombre, valor in inicial.items():
        assert np.array_equal(estado[nombre], valor)
    assert len(resultado.log) == 0
    with open(resultado.log_path, encoding="utf-8") as f:
        assert f.read() == "step,stage,task,loss\n"


def test_etapa_dos_sin_checkpoint_previo(tmp_path):
    with pytest.raises(ErrorArranque):
        train_stage(config(2, 1), tmp_path)


def test_etapa_dos_no_modifica_el_flexformer(tmp_path):
    train_stage(config(1, 2), tmp_path)
    resultado = train_stage(config(2, 3), tmp_path)
    antes = load_checkpoint(os.path.join(str(tmp_path), NOMBRES_CHECKPOINT[1]))
    despues = load_checkpoint(resultado.checkpoint)
    flex = [n for n in antes if n.startswith("flexformer.")]
    assert flex
    for nombre in flex:
        assert np.array_equal(antes[nombre], despues[nombre])
    assert any(n.startswith("dit.") for n in despues)
    assert set(resultado.log["task"]) <= {"prediction", "interpolation", "retrodiction"}
    assert list(resultado.log["step"]) == [0, 1, 2]


def test_etapa_tres_con_multiplano(tmp_path):
    train_stage(config(1, 1), tmp_path)
    train_stage(config(2, 1), tmp_path)
    resultado = train_stage(config(3, 2, gap=2, task_mix={"multishot": 1.0}), tmp_path)
    assert list(resultado.log["task"]) == ["multishot", "multishot"]
    assert os.path.exists(resultado.checkpoint)


def test_etapa_tres_exige_dit(tmp_path):
    train_stage(config(1, 0), tmp_path)
    with pytest.raises(ErrorArranque):
        train_stage(config(3, 1, checkpoint_in=tmp_path / NOMBRES_CHECKPOINT[1]), tmp_path)


def test_entrenamiento_determinista(tmp_path):
    a = train_stage(config(1, 2, seed=3), tmp_path / "a")
    b = train_stage(config(1, 2, seed=3), tmp_path / "b")
    with open(a.checkpoint, "rb") as fa, open(b.checkpoint, "rb") as fb:
        assert fa.read() == fb.read()
    assert a.log["loss"].tolist() == b.log["loss"].tolist()


def test_suavizar():
    assert suavizar([4.0, 2.0, 1.0, 1.0], ventana=2) == (3.0, 1.0)
    assert suavizar([5.0], ventana=50) == (5.0, 5.0)


def test_etapa_dos_aplica_la_estrategia_pedida(tmp_path):
    train_stage(config(1, 1, strategy="linear:8:1"), tmp_path)
    resultado = train_stage(config(2, 1, strategy="uniform:1"), tmp_path)
    assert resultado.model.strategy == parse_strategy("uniform:1")
    assert cargar_modelo(resultado.checkpoint).strategy == parse_strategy("uniform:1")


def test_etapa_dos_conserva_la_estrategia_del_checkpoint(tmp_path):
    train_stage(config(1, 1, strategy="linear:8:1"), tmp_path)
    cfg = TrainConfig(stage=2, steps=1, batch_size=1,
                      **{k: v for k, v in PEQUENO.items() if k != "strategy"})
    resultado = train_stage(cfg, tmp_path)
    assert resultado.model.strategy == parse_strategy("linear:8:1")


def test_gap_del_checkpoint_y_su_sustitucion(tmp_path):
    train_stage(config(1, 0, gap=3), tmp_path)
    assert cargar_modelo(os.path.join(str(tmp_path), NOMBRES_CHECKPOINT[1])).gap == 3
    cfg = TrainConfig(stage=2, steps=0, batch_size=1, **PEQUENO)
    assert train_stage(cfg, tmp_path).model.gap == 3
    assert train_stage(config(2, 0, gap=1), tmp_path).model.gap == 1


@pytest.mark.slow
def test_reconstruccion_aprende():
    # configuración de escritorio: 500 pasos, lote 8, rejilla 12x4x4, d=48, linear:8:1, semilla 0
    cfg = TrainConfig(stage=1)
    assert (cfg.steps, cfg.batch_size, cfg.grid, cfg.d_model, cfg.strategy, cfg.seed) == \
        (500, 8, (12, 4, 4), 48, "linear:8:1", 0)
    log = entrenar(cfg, modelo_inicial(cfg))
    inicial, final = suavizar(log["loss"].to_numpy())
    assert final < 0.5 * inicial


@pytest.mark.slow
def test_flujo_aprende(tmp_path):
    train_stage(TrainConfig(stage=1), tmp_path)
    resultado = train_stage(TrainConfig(stage=2, steps=1000), tmp_path)
    inicial, final = suavizar(resultado.log["loss"].to_numpy())
    assert final < 0.6 * inicial
    antes = load_checkpoint(os.path.join(str(tmp_path), NOMBRES_CHECKPOINT[1]))
    despues = load_checkpoint(resultado.checkpoint)
    for nombre in (n for n in antes if n.startswith("flexformer.")):
        assert np.array_equal(antes[nombre], despues[nombre])
