# Este archivo convierte el directorio 'test_api' en un paquete de Python.
# Pruebas del servicio HTTP de verificación con TestClient.
