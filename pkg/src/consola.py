"""
Mensajes de progreso del sistema.

Los mensajes llevan el prefijo emoji habitual del proyecto y se escriben en la
salida de error con `rich`, de modo que la salida estándar queda libre para las
líneas `ARTIFACT <ruta>` y el resumen de cada subcomando.
"""
import sys

from rich.console import Console

_consola = Console(stderr=True, highlight=False, soft_wrap=True)


def _emitir(prefijo, mensaje):
    _consola.print(f"{prefijo} {mensaje}", markup=False)


def inicio(mensaje):
    """Inicio de un proceso largo."""
    _emitir("🚀", mensaje)


def info(mensaje):
    """Mensaje informativo."""
    _emitir("ℹ️", mensaje)


def dato(mensaje):
    """Métrica o resultado intermedio."""
    _emitir("📊", mensaje)


def exito(mensaje):
    """Paso completado correctamente."""
    _emitir("✅", mensaje)


def aviso(mensaje):
    """Situación anómala que no detiene el proceso."""
    _emitir("⚠️", mensaje)


def error(mensaje):
    """Error que detiene la operación en curso."""
    _emitir("❌", mensaje)


def guardado(ruta):
    """Registra un fichero escrito en disco."""
    _emitir("💾", f"Fichero guardado: {ruta}")


def artefacto(ruta):
    """
    Anuncia en la salida estándar un fichero generado.

    :param ruta: Ruta del fichero escrito.
    """
    sys.stdout.write(f"ARTIFACT {ruta}\n")
    sys.stdout.flush()


def resumen(linea):
    """Escribe la línea de resumen de un subcomando en la salida estándar."""
    sys.stdout.write(f"{linea}\n")
    sys.stdout.flush()
