import numpy as np
import pytest

from compression import parse_strategy
from config import EvalConfig, TrainConfig
from datos_sinteticos import split_clip
from dit import DiTParams
from entrenamiento import entrenar, modelo_inicial
from evaluacion import clips_reservados, evaluate_context_utility, linea_base_congelada, \
    mse_reconstruccion, run_ablation, run_strategy_sweep
from flexformer import FlexFormerParams
from modelo import LoViCModel, dividir_tarea


@pytest.fixture
def modelo():
    flex = FlexFormerParams(d_model=12, heads=2, enc_blocks=1, dec_blocks=1, seed=1)
    return LoViCModel(flex, DiTParams(d_model=12, heads=2, blocks=1, seed=2),
                      parse_strategy("uniform:2"))


def test_clips_reservados_deterministas():
    a = clips_reservados(2, (6, 2, 2), 12, 1)
    b = clips_reservados(2, (6, 2, 2), 12, 1)
    assert all(np.array_equal(x.video, y.video) for x, y in zip(a, b))


def test_utilidad_del_contexto_columnas(modelo):
    df = evaluate_context_utility(modelo, n_clips=2, seeds=[0, 1], grid=(6, 2, 2), n_text=1,
                                  steps=1)
    assert list(df.columns) == ["task", "seed", "clip", "psnr_true", "psnr_shuffled",
                                "psnr_freeze", "ssim_true", "ssim_freeze"]
    assert len(df) == 4
    assert set(df["task"]) == {"prediction"}
    assert np.all(np.isfinite(df[["psnr_true", "psnr_shuffled", "psnr_freeze"]].to_numpy()))


def test_utilidad_del_contexto_varias_tareas(modelo):
    df = evaluate_context_utility(modelo, n_clips=2, seeds=[0], grid=(6, 2, 2), n_text=1,
                                  steps=1, tasks=("prediction", "retrodiction", "interpolation"))
    assert list(df["task"]) == ["prediction"] * 2 + ["retrodiction"] * 2 + ["interpolation"] * 2


def test_linea_base_congelada_por_tarea():
    clip = clips_reservados(1, (6, 2, 2), 12, 1)[0]
    s0, s1, s2 = split_clip(clip, 3)

    contexto, _ = dividir_tarea([s0, s1, s2], "prediction")
    esperado = np.repeat(s1.video.data[-1:], 2, axis=0)
    assert np.array_equal(linea_base_congelada("prediction", contexto, 2), esperado)

    contexto, _ = dividir_tarea([s0, s1, s2], "retrodiction")
    esperado = np.repeat(s1.video.data[:1], 2, axis=0)
    assert np.array_equal(linea_base_congelada("retrodiction", contexto, 2), esperado)

    contexto, _ = dividir_tarea([s0, s1, s2], "interpolation")
    esperado = np.repeat(s0.video.data[-1:], 2, axis=0)
    assert np.array_equal(linea_base_congelada("interpolation", contexto, 2), esperado)


def test_mse_reconstruccion_finito(modelo):
    assert np.isfinite(mse_reconstruccion(modelo, n_segmentos=2, grid=(6, 2, 2), n_text=1))


def test_ablacion_rapida():
    df = run_ablation(["irope", "mrope_multi", "mrope_single"], [0], steps=1, batch_size=1,
                      strategy="uniform:2", grid=(6, 2, 2), d_model=12, heads=2, blocks=1,
                      n_text=1)
    assert list(df["variant"]) == ["irope", "mrope_multi", "mrope_single"]
    assert list(df.columns) == ["variant", "seed", "final_mse", "final_train_loss"]
    assert np.all(np.isfinite(df["final_mse"]))


def test_ablacion_por_defecto_incluye_las_tres_variantes():
    assert EvalConfig().variants == ["irope", "mrope_single", "mrope_multi"]


def test_barrido_de_estrategias_rapido(modelo):
    df = run_strategy_sweep(modelo, ["uniform:2", "uniform:1"], [0], steps=1, batch_size=1,
                            n_clips=2, grid=(6, 2, 2), n_text=1, dit_blocks=1, sample_steps=1)
    assert list(df.columns) == ["strategy", "seed", "n_queries", "overall_ratio",
                                "psnr_prediction", "final_train_loss"]
    assert list(df["strategy"]) == ["uniform:2", "uniform:1"]
    assert list(df["n_queries"]) == [4, 8]
    assert list(df["overall_ratio"]) == [2.0, 1.0]
    assert np.all(np.isfinite(df["psnr_prediction"]))


def test_barrido_no_modifica_el_modelo_de_partida(modelo):
    dit = modelo.dit
    run_strategy_sweep(modelo, ["uniform:1"], [0], steps=1, batch_size=1, n_clips=1,
                       grid=(6, 2, 2), n_text=1, dit_blocks=1, sample_steps=1)
    assert modelo.dit is dit
    assert modelo.strategy == parse_strategy("uniform:2")


def _modelo_entrenado(pasos_etapa1=500, pasos_etapa2=1500):
    """FlexFormer + DiT pequeños entrenados en memoria sobre la rejilla de escritorio."""
    comunes = {"batch_size": 8, "learning_rate": 1e-3, "strategy": "uniform:4", "d_model": 24,
               "heads": 2, "grid": (12, 4, 4), "seed": 0}
    etapa1 = TrainConfig(stage=1, steps=pasos_etapa1, enc_blocks=2, dec_blocks=2, **comunes)
    model = modelo_inicial(etapa1)
    entrenar(etapa1, model)
    etapa2 = TrainConfig(stage=2, steps=pasos_etapa2, dit_blocks=2,
                         task_mix={"prediction": 1.0}, **comunes)
    model.dit = DiTParams(24, 2, 2, seed=1)
    entrenar(etapa2, model)
    return model


@pytest.mark.slow
def test_historia_real_supera_a_barajada_y_a_congelar():
    df = evaluate_context_utility(_modelo_entrenado(), n_clips=32, seeds=(0, 1, 2),
                                  grid=(12, 4, 4), steps=16)
    assert df["psnr_true"].mean() > df["psnr_shuffled"].mean()
    assert df["psnr_true"].mean() > df["psnr_freeze"].mean()


@pytest.mark.slow
def test_ablacion_ordena_las_tres_variantes():
    df = run_ablation(["irope", "mrope_single", "mrope_multi"], [0, 1, 2], steps=300,
                      batch_size=4, strategy="uniform:4", grid=(12, 4, 4), d_model=24, heads=2,
                      blocks=2, learning_rate=1e-3)
    medias = df.groupby("variant")["final_mse"].mean()
    assert medias["irope"] < medias["mrope_single"] < medias["mrope_multi"]


@pytest.mark.slow
def test_barrido_mas_consultas_mejor_prediccion():
    comunes = {"batch_size": 8, "learning_rate": 1e-3, "strategy": "uniform:4", "d_model": 24,
               "heads": 2, "grid": (12, 4, 4), "seed": 0}
    etapa1 = TrainConfig(stage=1, steps=500, enc_blocks=2, dec_blocks=2, **comunes)
    model = modelo_inicial(etapa1)
    entrenar(etapa1, model)
    df = run_strategy_sweep(model, ["uniform:8", "uniform:2"], [0, 1], steps=600,
                            batch_size=4, learning_rate=1e-3, n_clips=8)
    medias = df.groupby("strategy")["psnr_prediction"].mean()
    assert medias["uniform:2"] > medias["uniform:8"]
