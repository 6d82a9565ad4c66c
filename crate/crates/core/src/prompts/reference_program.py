import numpy as np
import matplotlib.pyplot as plt
import ipycontrols as controls
from IPython.display import display, clear_output
from PIL import Image
from skimage import data, img_as_ubyte
from matplotlib.patches import Wedge
import matplotlib.colors as mcolors

image = data.astronaut()
image = Image.fromarray(img_as_ubyte(image))

# Function to allow performing the task
def adjust_hue(image, hue):
    img_hsv = image.convert('HSV')  
    np_img = np.array(img_hsv)  

    hue_shift = int(hue * 255)
    
    np_img = np_img.astype(np.int32)
    np_img[..., 0] = (np_img[..., 0] + hue_shift) 

    np_img = np.clip(np_img, 0, 255).astype(np.uint8)

    adjusted_img = Image.fromarray(np_img, mode='HSV').convert('RGB') 
    return adjusted_img

# Function to create controls
def create_hue_controls():
    # Slider
    slider_label = controls.Label(value='Slider:')
    slider = controls.FloatSlider(value=0.0, min=0.0, max=1.0, step=0.01)

    # Dropdown
    dropdown_label = controls.Label(value='Dropdown:')
    dropdown = controls.Dropdown(options=[0.0, 0.2, 0.4, 0.6, 0.8], value=0.0)

    # Radio Buttons
    radio_buttons_label = controls.Label(value='Radio Buttons:')
    radio_buttons = controls.RadioButtons(options=[0.0, 0.2, 0.4, 0.6, 0.8], value=0.0)

    # Text Field
    text_field_label = controls.Label(value='Text Field:')
    text_field = controls.BoundedFloatText(value=0.0, min=0.0, max=1.0, step=0.01)
    
    # Preset Buttons
    preset_label = controls.Label(value='Preset buttons:')
    
    preset_hues = [
        (0.0, 'red'), 
        (0.2, 'green'), 
        (0.4, 'cyan'), 
        (0.6, 'blue'), 
        (0.8, 'magenta')
    ]
    
    hue_mapping = {f"{hue}": hue for hue, color in preset_hues}
    
    preset_buttons = [
        controls.Button(
            description=f"{hue}",
            layout=controls.Layout(width='75px', height='30px'),
            style={'button_color': color}
        )
        for hue, color in preset_hues
    ]
    
    preset_buttons_box = controls.HBox(preset_buttons)
    
    # Color Wheel
    color_wheel_label = controls.Label(value='Color Wheel:')
    color_wheel = controls.Output()
    create_color_wheel(color_wheel)
    
    # Color Picker
    color_picker_label = controls.Label(value='Color Picker:')
    color_picker = controls.ColorPicker(concise=True, value='#ffffff', disabled=False)

    # Layout
    layout = controls.Layout(align_items='flex-start')
    spacer = controls.Box(value='', layout=controls.Layout(height='20px'))

    # Combine controls into a vertical box
    controls_box = controls.VBox([slider_label, slider, spacer, 
                                dropdown_label, dropdown, spacer, 
                                radio_buttons_label, radio_buttons, spacer, 
                                text_field_label, text_field, spacer, 
                                preset_label, preset_buttons_box, spacer, 
                                color_wheel_label, color_wheel, spacer, 
                                color_picker_label, color_picker, spacer], layout=layout)
    
    return controls_box, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping, color_wheel, color_picker

# Function to create and display the color wheel
def create_color_wheel(output):
    with output:
        clear_output(wait=True)
        
        fig, ax = plt.subplots(figsize=(1.5, 1.5))
        
        num_colors = 360
        theta = np.linspace(0, 2 * np.pi, num_colors, endpoint=False)
        colors = plt.cm.hsv(theta / (2 * np.pi))
        
        for i in range(num_colors):
            wedge = Wedge(center=(0, 0), r=1, theta1=(i * 360 / num_colors), 
                          theta2=((i + 1) * 360 / num_colors), color=colors[i], 
                          transform=ax.transData._b, clip_on=False)
            ax.add_patch(wedge)
        
        ax.set_aspect('equal')
        ax.set_xlim(-1.1, 1.1)
        ax.set_ylim(-1.1, 1.1)
        ax.axis('off')
        fig.canvas.mpl_connect('button_press_event', on_color_wheel_click)
        plt.show()

# Function to handle color wheel click
def on_color_wheel_click(event):
    if event.inaxes:
        x, y = event.xdata, event.ydata
        theta = np.arctan2(y, x) 
        hue = theta / (2 * np.pi)
        hue = round(hue, 2) 

        update_plot(None, image, output, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping, hue=hue)

# Function to convert hex color to hue value
def hex_to_hue(hex_color):
    rgb = np.array([int(hex_color[i:i+2], 16) for i in (1, 3, 5)]) / 255.0
    hsv = mcolors.rgb_to_hsv(rgb.reshape(1, 1, 3))
    hue = hsv[0, 0, 0]
    return hue

# Function to update the image display based on control values
def update_plot(change, image, output, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping, hue=None):
    with output:
        clear_output(wait=True)

        if hue is None:
            if change and change['owner'] in preset_buttons:
                clicked_button = change['owner']
                hue = hue_mapping[clicked_button.description]
            elif change and change['owner'] == slider:
                hue = slider.value
            elif change and change['owner'] == dropdown:
                hue = dropdown.value
            elif change and change['owner'] == radio_buttons:
                hue = radio_buttons.value
            elif change and change['owner'] == text_field:
                hue = text_field.value
            elif change and change['owner'] == color_picker:
                hue = hex_to_hue(change['new'])
            else:
                hue = 0.0

        adjusted_image = adjust_hue(image, hue)
        plt.figure(figsize=(4, 4))
        plt.imshow(adjusted_image)
        plt.axis('off')
        plt.title(f'Hue Adjustment: {hue:.2f}')
        plt.show()

# Function to link controls to the update function
def link_controls_to_update(image, output, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping, color_picker):
    def callback(change):
        update_plot(change, image, output, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping)
    
    slider.observe(callback, names='value')
    dropdown.observe(callback, names='value')
    radio_buttons.observe(callback, names='value')
    text_field.observe(callback, names='value')
    color_picker.observe(callback, names='value')
    for btn in preset_buttons:
        btn.on_click(lambda btn: update_plot({'owner': btn}, image, output, slider, dropdown, radio_buttons, text_field, preset_buttons, hue_mapping))
