

APP_VERSION = "1.0.0"
APP_NAME = "SphereControlLab"
